//! Experiment loop tying schedules, the network engine and pruning together.
//!
//! Per batch: forward, loss, backward, SGD step, degenerate-weight detection.
//! Every `update_interval` batches (and at the last batch) the target
//! keep-ratio is sampled, the configured top-up runs and a trace row is
//! appended. Row 0 records the state before any training.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::{
    block_gmp_topup, build_partition, detect_degenerate_blocks, selective_decay, BlockMaskState,
    BlockPartition, SELECTIVE_DECAY_BASE,
};
use crate::dataset::{load_idx, Dataset, SyntheticBlobs};
use crate::error::{Error, Result};
use crate::io::snapshot::MaskSnapshot;
use crate::pruning::{
    detect_degenerate, gmp_topup, keep_ratio, random_topup, MaskState, DEFAULT_THRESHOLD,
};
use crate::schedules::{
    keep_ratio_value, lr_value, KeepRatioKind, KeepRatioScheduleSpec, LrScheduleSpec, RunClock,
};
use crate::tensor::{
    backward, forward, sgd_step, softmax_cross_entropy, NetworkSpec, OptimizerState, ParamStore,
};

const RNG_STREAM_SHUFFLE: u64 = 1;
const RNG_STREAM_PRUNE: u64 = 2;
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneStrategy {
    Gmp,
    Random,
    BlockGmp,
}

/// When degenerate weights are looked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateCheck {
    EveryStep,
    EveryInterval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    SyntheticBlobs(SyntheticBlobs),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        eval_images: Option<PathBuf>,
        eval_labels: Option<PathBuf>,
        mean: f64,
        std: f64,
        classes: Option<usize>,
    },
}

impl DatasetSpec {
    /// `(train, eval)`. IDX runs without an eval pair evaluate on the
    /// training images.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::SyntheticBlobs(blobs) => blobs.generate(),
            DatasetSpec::Idx {
                images,
                labels,
                eval_images,
                eval_labels,
                mean,
                std,
                classes,
            } => {
                let train = load_idx(images, labels, *mean, *std)?;
                let classes =
                    classes.or_else(|| train.labels.iter().map(|&l| l as usize + 1).max());
                let eval = match (eval_images, eval_labels) {
                    (Some(i), Some(l)) => load_idx(i, l, *mean, *std)?.into_dataset(classes)?,
                    (None, None) => train.clone().into_dataset(classes)?,
                    _ => {
                        return Err(Error::Validation(
                            "eval images and eval labels must be given together".into(),
                        ))
                    }
                };
                Ok((train.into_dataset(classes)?, eval))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    /// Total epochs `T`.
    pub epochs: u64,
    pub cycle_length: u64,
    pub num_cycles: u64,
    pub batches_per_epoch: u64,
    pub batch_size: usize,
    pub lr_schedule: LrScheduleSpec,
    pub keep_kind: KeepRatioKind,
    pub final_keep: f64,
    pub method: PruneStrategy,
    pub momentum: f64,
    pub weight_decay: f64,
    pub selective_decay: bool,
    /// L0 cutoff for selective decay; defaults to the initial threshold.
    pub decay_l0_cutoff: f64,
    pub update_interval: u64,
    pub initial_threshold: f64,
    pub degenerate_check: DegenerateCheck,
    pub seed: u64,
    /// Evaluation cadence in batches.
    pub eval_every: u64,
}

impl ExperimentConfig {
    /// Config with the documented defaults for everything but the network,
    /// data and run length.
    pub fn new(
        network: NetworkSpec,
        dataset: DatasetSpec,
        epochs: u64,
        batches_per_epoch: u64,
    ) -> Self {
        Self {
            network,
            dataset,
            epochs,
            cycle_length: 7,
            num_cycles: 5,
            batches_per_epoch,
            batch_size: 128,
            lr_schedule: LrScheduleSpec::three_step(),
            keep_kind: KeepRatioKind::Linear,
            final_keep: 0.15,
            method: PruneStrategy::Gmp,
            momentum: 0.9,
            weight_decay: 0.0,
            selective_decay: false,
            decay_l0_cutoff: DEFAULT_THRESHOLD,
            update_interval: 100,
            initial_threshold: DEFAULT_THRESHOLD,
            degenerate_check: DegenerateCheck::EveryStep,
            seed: 0,
            eval_every: batches_per_epoch.max(1),
        }
    }

    pub fn keep_schedule(&self) -> Result<KeepRatioScheduleSpec> {
        KeepRatioScheduleSpec::new(self.keep_kind, self.final_keep, self.epochs as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.batches_per_epoch == 0 || self.batch_size == 0 {
            return fail("batches_per_epoch and batch_size must be positive".into());
        }
        if self.update_interval == 0 || self.eval_every == 0 {
            return fail("update_interval and eval_every must be positive".into());
        }
        if !(self.initial_threshold >= 0.0 && self.initial_threshold.is_finite()) {
            return fail(format!(
                "initial_threshold {} must be >= 0",
                self.initial_threshold
            ));
        }
        if !(self.decay_l0_cutoff >= 0.0 && self.decay_l0_cutoff.is_finite()) {
            return fail(format!(
                "decay_l0_cutoff {} must be >= 0",
                self.decay_l0_cutoff
            ));
        }
        if self.selective_decay && self.method != PruneStrategy::BlockGmp {
            return fail("selective_decay requires prune_method = block_gmp".into());
        }
        self.lr_schedule.validate()?;
        if let LrScheduleSpec::Cyclic { cycle_length, .. } = &self.lr_schedule {
            if *cycle_length != self.cycle_length {
                return fail(format!(
                    "cyclic schedule length {cycle_length} differs from cycle_length {}",
                    self.cycle_length
                ));
            }
            if self.epochs != self.num_cycles * self.cycle_length {
                return fail(format!(
                    "cyclic runs need epochs = num_cycles * cycle_length = {}, got {}",
                    self.num_cycles * self.cycle_length,
                    self.epochs
                ));
            }
        }
        if let KeepRatioKind::CycleGatedExponential { cycle_length, .. } = self.keep_kind {
            if cycle_length != self.cycle_length {
                return fail(format!(
                    "gated schedule cycle {cycle_length} differs from cycle_length {}",
                    self.cycle_length
                ));
            }
        }
        self.keep_schedule()?;
        self.network.shapes()?;
        if self.network.param_layout().iter().all(|(_, _, p)| !p) {
            return fail("network has no prunable weights".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub t: f64,
    pub lr: f64,
    pub target_keep: f64,
    pub actual_keep: f64,
    pub explicit_cum: u64,
    pub shed_cum: u64,
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

/// Mask bookkeeping recorded alongside every trace row. Counts are in the
/// run's pruning unit: weights, or blocks for block GMP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowState {
    pub threshold: f64,
    pub kept: usize,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub row_states: Vec<RowState>,
    pub mask: MaskSnapshot,
    pub params: ParamStore,
}

/// Serves batches; each epoch draws a fresh permutation and the dataset is
/// cycled when an epoch asks for more samples than it holds.
struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: Option<u64>,
    batch_size: usize,
    batches_per_epoch: u64,
}

impl Batcher {
    fn new(seed: u64, samples: usize, batch_size: usize, batches_per_epoch: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(RNG_STREAM_SHUFFLE);
        Self {
            rng,
            order: (0..samples).collect(),
            epoch: None,
            batch_size,
            batches_per_epoch,
        }
    }

    /// Indices for global batch `b`; calls must be non-decreasing in `b`.
    fn indices(&mut self, b: u64) -> Vec<usize> {
        let epoch = b / self.batches_per_epoch;
        while self.epoch != Some(epoch) {
            self.order.shuffle(&mut self.rng);
            self.epoch = Some(self.epoch.map_or(0, |e| e + 1));
        }
        let n = self.order.len();
        let start = (b % self.batches_per_epoch) as usize * self.batch_size;
        (start..start + self.batch_size)
            .map(|i| self.order[i % n])
            .collect()
    }
}

enum Pruner {
    Weights {
        rng: Option<ChaCha8Rng>,
    },
    Blocks {
        partition: BlockPartition,
        bmask: BlockMaskState,
    },
}

struct RunState {
    params: ParamStore,
    opt: OptimizerState,
    mask: MaskState,
    pruner: Pruner,
}

impl RunState {
    fn detect(&mut self) {
        match &mut self.pruner {
            Pruner::Weights { .. } => {
                detect_degenerate(&mut self.params, &mut self.opt, &mut self.mask);
            }
            Pruner::Blocks { partition, bmask } => {
                detect_degenerate_blocks(
                    &mut self.params,
                    &mut self.opt,
                    &mut self.mask,
                    bmask,
                    partition,
                );
            }
        }
    }

    fn topup(&mut self, r_target: f64) -> Result<()> {
        match &mut self.pruner {
            Pruner::Weights { rng: None } => {
                gmp_topup(&mut self.params, &mut self.opt, &mut self.mask, r_target)?;
            }
            Pruner::Weights { rng: Some(rng) } => {
                random_topup(
                    &mut self.params,
                    &mut self.opt,
                    &mut self.mask,
                    r_target,
                    rng,
                )?;
            }
            Pruner::Blocks { partition, bmask } => {
                block_gmp_topup(
                    &mut self.params,
                    &mut self.opt,
                    &mut self.mask,
                    bmask,
                    partition,
                    r_target,
                )?;
            }
        }
        Ok(())
    }

    /// (actual keep-ratio, explicit, shed, state) in the run's pruning unit.
    fn counters(&self) -> (f64, u64, u64, RowState) {
        match &self.pruner {
            Pruner::Weights { .. } => (
                keep_ratio(&self.mask),
                self.mask.explicitly_pruned() as u64,
                self.mask.shed() as u64,
                RowState {
                    threshold: self.mask.threshold(),
                    kept: self.mask.kept(),
                    total: self.mask.total(),
                },
            ),
            Pruner::Blocks { bmask, .. } => (
                bmask.keep_ratio(),
                bmask.explicitly_pruned() as u64,
                bmask.shed() as u64,
                RowState {
                    threshold: bmask.threshold(),
                    kept: bmask.kept_count(),
                    total: bmask.total(),
                },
            ),
        }
    }

    fn snapshot(&self) -> MaskSnapshot {
        match &self.pruner {
            Pruner::Weights { .. } => MaskSnapshot::from_mask(&self.mask),
            Pruner::Blocks { partition, bmask } => MaskSnapshot::from_blocks(partition, bmask),
        }
    }
}

/// Loads the data and checks it against the network.
fn prepare_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train, eval) = config.dataset.load()?;
    let input: usize = config.network.input_shape.iter().product();
    let fit = |d: Dataset| -> Result<Dataset> {
        if d.sample_shape() == config.network.input_shape.as_slice() {
            return Ok(d);
        }
        if d.sample_shape().iter().product::<usize>() != input {
            return Err(Error::Validation(format!(
                "dataset samples of shape {:?} do not fit network input {:?}",
                d.sample_shape(),
                config.network.input_shape
            )));
        }
        d.reshape_samples(&config.network.input_shape)
    };
    let (train, eval) = (fit(train)?, fit(eval)?);
    let outputs = config.network.output_shape()?;
    if outputs != [train.num_classes] {
        return Err(Error::Validation(format!(
            "network output {outputs:?} does not match {} classes",
            train.num_classes
        )));
    }
    Ok((train, eval))
}

/// Top-1 accuracy with masked weights zeroed. Ties in the logits resolve to
/// the lowest class index.
pub fn evaluate(
    net: &NetworkSpec,
    params: &ParamStore,
    mask: &MaskState,
    data: &Dataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let mut masked = params.clone();
    for mt in mask.tensors() {
        let w = masked.tensor_mut(mt.param_index).data_mut();
        for (wi, &k) in w.iter_mut().zip(&mt.kept) {
            if !k {
                *wi = 0.0;
            }
        }
    }
    let mut correct = 0;
    let mut start = 0;
    while start < data.len() {
        let count = EVAL_CHUNK.min(data.len() - start);
        let (logits, _) = forward(net, &masked, &data.inputs.rows(start, count))?;
        let classes = logits.shape()[1];
        correct += logits
            .data()
            .chunks_exact(classes)
            .zip(&data.labels[start..start + count])
            .filter(|(row, &label)| crate::tensor::argmax(row) == label)
            .count();
        start += count;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Runs one experiment. Deterministic given the config, including its seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let (train, eval) = prepare_data(config)?;
    let net = &config.network;
    let keep_schedule = config.keep_schedule()?;
    let clock = RunClock::new(config.batches_per_epoch, config.epochs)?;
    let total_batches = clock.total_batches();

    let params = net.init_params(config.seed);
    let opt = OptimizerState::new(&params, config.momentum, config.weight_decay)?;
    let mask = MaskState::new(&params, config.initial_threshold);
    let pruner = match config.method {
        PruneStrategy::Gmp => Pruner::Weights { rng: None },
        PruneStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(RNG_STREAM_PRUNE);
            Pruner::Weights { rng: Some(rng) }
        }
        PruneStrategy::BlockGmp => {
            let partition = build_partition(net)?;
            let bmask = BlockMaskState::new(&partition, config.initial_threshold);
            Pruner::Blocks { partition, bmask }
        }
    };
    let mut state = RunState {
        params,
        opt,
        mask,
        pruner,
    };
    let mut batcher = Batcher::new(
        config.seed,
        train.len(),
        config.batch_size,
        config.batches_per_epoch,
    );

    let mut trace = RunTrace::default();
    let mut row_states = Vec::new();

    // Row 0: untrained network, loss measured on the first batch.
    let first = batcher.indices(0);
    let (logits, _) = forward(net, &state.params, &train.inputs.gather_rows(&first))?;
    let labels: Vec<usize> = first.iter().map(|&i| train.labels[i]).collect();
    let initial = softmax_cross_entropy(&logits, &labels)?;
    let r0 = keep_ratio_value(&keep_schedule, 0.0)?;
    state.topup(r0)?;
    let lr0 = if total_batches > 0 {
        lr_value(&config.lr_schedule, &clock.at(0))?
    } else {
        config.lr_schedule.steps()[0].rate
    };
    let (actual, explicit, shed, row_state) = state.counters();
    trace.rows.push(TraceRow {
        step: 0,
        t: 0.0,
        lr: lr0,
        target_keep: r0,
        actual_keep: actual,
        explicit_cum: explicit,
        shed_cum: shed,
        loss: initial.loss,
        train_acc: initial.correct as f64 / labels.len() as f64,
        eval_acc: Some(evaluate(net, &state.params, &state.mask, &eval)?),
    });
    row_states.push(row_state);

    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    let mut last_eval = 0u64;
    for step in 1..=total_batches {
        let b = step - 1;
        let lr = lr_value(&config.lr_schedule, &clock.at(b))?;
        let idx = batcher.indices(b);
        let batch = train.inputs.gather_rows(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let (logits, cache) = forward(net, &state.params, &batch)?;
        let out = softmax_cross_entropy(&logits, &labels)?;
        if !out.loss.is_finite() {
            let (actual, explicit, shed, _) = state.counters();
            trace.rows.push(TraceRow {
                step,
                t: clock.at(step).t(),
                lr,
                target_keep: f64::NAN,
                actual_keep: actual,
                explicit_cum: explicit,
                shed_cum: shed,
                loss: out.loss,
                train_acc: f64::NAN,
                eval_acc: None,
            });
            return Err(Error::Diverged {
                step,
                trace: Box::new(trace),
            });
        }
        let grads = backward(net, &state.params, &cache, &out.grad)?;
        let decay = match (&state.pruner, config.selective_decay) {
            (Pruner::Blocks { partition, bmask }, true) => Some(selective_decay(
                bmask,
                partition,
                &state.params,
                SELECTIVE_DECAY_BASE,
                config.decay_l0_cutoff,
            )),
            _ => None,
        };
        sgd_step(
            &mut state.params,
            &grads,
            &mut state.opt,
            &state.mask,
            lr,
            decay.as_ref(),
        )?;
        if config.degenerate_check == DegenerateCheck::EveryStep {
            state.detect();
        }
        loss_sum += out.loss * labels.len() as f64;
        correct += out.correct;
        seen += labels.len();

        if step % config.update_interval == 0 || step == total_batches {
            if config.degenerate_check == DegenerateCheck::EveryInterval {
                state.detect();
            }
            let t = clock.at(step).t();
            let r_t = keep_ratio_value(&keep_schedule, t)?;
            state.topup(r_t)?;
            let eval_acc = if step / config.eval_every > last_eval / config.eval_every
                || step == total_batches
            {
                last_eval = step;
                Some(evaluate(net, &state.params, &state.mask, &eval)?)
            } else {
                None
            };
            let (actual, explicit, shed, row_state) = state.counters();
            trace.rows.push(TraceRow {
                step,
                t,
                lr,
                target_keep: r_t,
                actual_keep: actual,
                explicit_cum: explicit,
                shed_cum: shed,
                loss: loss_sum / seen as f64,
                train_acc: correct as f64 / seen as f64,
                eval_acc,
            });
            row_states.push(row_state);
            loss_sum = 0.0;
            correct = 0;
            seen = 0;
        }
    }

    let mask = state.snapshot();
    Ok(RunOutcome {
        trace,
        row_states,
        mask,
        params: state.params,
    })
}

/// End-of-run shedding numbers for one momentum value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShedSummary {
    pub momentum: f64,
    pub final_keep: f64,
    pub explicit_cum: u64,
    pub shed_cum: u64,
    pub cascade_ratio: f64,
}

impl ShedSummary {
    pub fn from_trace(momentum: f64, trace: &RunTrace) -> Option<Self> {
        let last = trace.rows.last()?;
        Some(Self {
            momentum,
            final_keep: last.actual_keep,
            explicit_cum: last.explicit_cum,
            shed_cum: last.shed_cum,
            cascade_ratio: crate::analysis::cascade_ratio(last.explicit_cum, last.shed_cum),
        })
    }
}

/// Runs `config` once per momentum value, in parallel. Results come back in
/// the order of `momenta`.
pub fn momentum_sweep(
    config: &ExperimentConfig,
    momenta: &[f64],
) -> Result<Vec<(f64, RunOutcome)>> {
    if momenta.len() < 2 {
        return Err(Error::Validation(
            "a momentum sweep needs at least two values".into(),
        ));
    }
    let configs: Vec<ExperimentConfig> = momenta
        .iter()
        .map(|&momentum| ExperimentConfig {
            momentum,
            ..config.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let results: Vec<Result<RunOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run_experiment(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    });
    momenta
        .iter()
        .zip(results)
        .map(|(&m, r)| r.map(|o| (m, o)))
        .collect()
}
