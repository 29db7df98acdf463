//! Flat `key = value` experiment configs.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys may appear at most once. Relative dataset paths are resolved against
//! the directory holding the config file.
//!
//! Required: `network`, `batches_per_epoch`, and `epochs` (optional for a
//! cyclic learning-rate schedule, where it defaults to
//! `num_cycles * cycle_length`).
//!
//! `network` is a comma-separated layer list:
//! `dense:IN:OUT`, `conv2d:IN:OUT:KH:KW:STRIDE:PAD`, `relu`, `flatten`,
//! `batchnorm:C`. `input_shape` (e.g. `1x28x28`) defaults to the input width
//! of a leading dense layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::SyntheticBlobs;
use crate::error::{Error, Result};
use crate::harness::{DatasetSpec, DegenerateCheck, ExperimentConfig, PruneStrategy};
use crate::schedules::{KeepRatioKind, LrScheduleSpec, LrStep};
use crate::tensor::{LayerSpec, NetworkSpec};

const KNOWN_KEYS: &[&str] = &[
    "network",
    "input_shape",
    "dataset",
    "dataset.classes",
    "dataset.dims",
    "dataset.samples",
    "dataset.eval_samples",
    "dataset.noise",
    "dataset.seed",
    "dataset.images",
    "dataset.labels",
    "dataset.eval_images",
    "dataset.eval_labels",
    "dataset.mean",
    "dataset.std",
    "epochs",
    "batches_per_epoch",
    "batch_size",
    "cycle_length",
    "num_cycles",
    "lr_schedule",
    "lr_boundaries",
    "lr_rates",
    "prune_schedule",
    "final_keep",
    "tau",
    "gate_epochs",
    "prune_method",
    "momentum",
    "weight_decay",
    "selective_decay",
    "decay_l0_cutoff",
    "update_interval",
    "initial_threshold",
    "degenerate_check",
    "seed",
    "eval_every",
];

const DEFAULT_TAU: f64 = 3.0;
const DEFAULT_GATE_EPOCHS: u64 = 2;

struct Entries {
    values: BTreeMap<String, (String, usize)>,
}

fn config_err(key: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(config_err(content, line, "expected `key = value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(config_err(key, line, "unknown key"));
            }
            if let Some((_, first)) = values.get(key) {
                return Err(config_err(
                    key,
                    line,
                    format!("duplicate key (first set on line {first})"),
                ));
            }
            values.insert(key.to_string(), (value.to_string(), line));
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.values.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn line(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |(_, l)| *l)
    }

    fn get<T: FromStr>(&self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| config_err(key, line, format!("expected {kind}, found `{v}`"))),
        }
    }

    fn required<T: FromStr>(&self, key: &str, kind: &str) -> Result<T> {
        self.get(key, kind)?
            .ok_or_else(|| config_err(key, 0, "required key is missing"))
    }

    fn real(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.get::<f64>(key, "a real number")?.unwrap_or(default);
        if !v.is_finite() {
            return Err(config_err(key, self.line(key), "must be finite"));
        }
        Ok(v)
    }

    fn count<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key, "a non-negative integer")?.unwrap_or(default))
    }

    fn check(&self, key: &str, ok: bool, message: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(config_err(key, self.line(key), message))
        }
    }

    fn list<T: FromStr>(&self, key: &str, kind: &str) -> Result<Option<Vec<T>>> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                item.trim().parse().map_err(|_| {
                    config_err(key, line, format!("expected a list of {kind}, found `{v}`"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

fn parse_layer(token: &str) -> Option<LayerSpec> {
    let mut parts = token.trim().split(':');
    let kind = parts.next()?;
    let nums: Vec<usize> = parts.map(|p| p.parse().ok()).collect::<Option<_>>()?;
    match (kind, nums.as_slice()) {
        ("dense", &[inputs, outputs]) => Some(LayerSpec::Dense { inputs, outputs }),
        ("conv2d", &[in_channels, out_channels, kernel_h, kernel_w, stride, padding]) => {
            Some(LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            })
        }
        ("relu", []) => Some(LayerSpec::Relu),
        ("flatten", []) => Some(LayerSpec::Flatten),
        ("batchnorm", &[channels]) => Some(LayerSpec::BatchNorm { channels }),
        _ => None,
    }
}

fn format_layer(layer: &LayerSpec) -> String {
    match *layer {
        LayerSpec::Dense { inputs, outputs } => format!("dense:{inputs}:{outputs}"),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => {
            format!("conv2d:{in_channels}:{out_channels}:{kernel_h}:{kernel_w}:{stride}:{padding}")
        }
        LayerSpec::Relu => "relu".into(),
        LayerSpec::Flatten => "flatten".into(),
        LayerSpec::BatchNorm { channels } => format!("batchnorm:{channels}"),
    }
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items
        .into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

fn parse_network(e: &Entries) -> Result<NetworkSpec> {
    let (text, line) = e
        .raw("network")
        .ok_or_else(|| config_err("network", 0, "required key is missing"))?;
    let layers = text
        .split(',')
        .map(|tok| {
            parse_layer(tok)
                .ok_or_else(|| config_err("network", line, format!("bad layer `{}`", tok.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    let input_shape = match e.raw("input_shape") {
        Some((v, l)) => v
            .split('x')
            .map(|d| d.trim().parse::<usize>().ok().filter(|&d| d > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                config_err(
                    "input_shape",
                    l,
                    format!("expected dims like 1x28x28, found `{v}`"),
                )
            })?,
        None => match layers.first() {
            Some(LayerSpec::Dense { inputs, .. }) => vec![*inputs],
            _ => {
                return Err(config_err(
                    "input_shape",
                    0,
                    "required unless the first layer is dense",
                ))
            }
        },
    };
    NetworkSpec::new(input_shape, layers)
        .map_err(|err| config_err("network", line, err.to_string()))
}

fn parse_dataset(e: &Entries, base: &Path) -> Result<DatasetSpec> {
    let kind = e.raw("dataset").map_or("synthetic_blobs", |(v, _)| v);
    match kind {
        "synthetic_blobs" => {
            let d = SyntheticBlobs::default();
            let blobs = SyntheticBlobs {
                classes: e.count("dataset.classes", d.classes)?,
                dims: e.count("dataset.dims", d.dims)?,
                samples: e.count("dataset.samples", d.samples)?,
                eval_samples: e.count("dataset.eval_samples", d.eval_samples)?,
                noise: e.real("dataset.noise", d.noise)?,
                seed: e.count("dataset.seed", d.seed)?,
            };
            e.check("dataset.classes", blobs.classes >= 2, "must be at least 2")?;
            e.check("dataset.dims", blobs.dims >= 1, "must be positive")?;
            e.check("dataset.samples", blobs.samples >= 1, "must be positive")?;
            e.check(
                "dataset.eval_samples",
                blobs.eval_samples >= 1,
                "must be positive",
            )?;
            e.check("dataset.noise", blobs.noise >= 0.0, "must be >= 0")?;
            Ok(DatasetSpec::SyntheticBlobs(blobs))
        }
        "idx" => {
            let path = |key: &str| e.raw(key).map(|(v, _)| base.join(v));
            let images = path("dataset.images")
                .ok_or_else(|| config_err("dataset.images", 0, "required for dataset = idx"))?;
            let labels = path("dataset.labels")
                .ok_or_else(|| config_err("dataset.labels", 0, "required for dataset = idx"))?;
            let std = e.real("dataset.std", 1.0)?;
            e.check("dataset.std", std > 0.0, "must be > 0")?;
            let classes = e.get::<usize>("dataset.classes", "a positive integer")?;
            e.check(
                "dataset.classes",
                classes.is_none_or(|c| c >= 2),
                "must be at least 2",
            )?;
            Ok(DatasetSpec::Idx {
                images,
                labels,
                eval_images: path("dataset.eval_images"),
                eval_labels: path("dataset.eval_labels"),
                mean: e.real("dataset.mean", 0.0)?,
                std,
                classes,
            })
        }
        other => Err(config_err(
            "dataset",
            e.line("dataset"),
            format!("expected synthetic_blobs or idx, found `{other}`"),
        )),
    }
}

fn parse_lr(e: &Entries, cycle_length: u64, epochs: Option<u64>) -> Result<LrScheduleSpec> {
    let kind = e.raw("lr_schedule").map_or("three_step", |(v, _)| v);
    let line = e.line("lr_schedule");
    let mut spec = match kind {
        "three_step" => LrScheduleSpec::three_step(),
        "three_step_scaled" => {
            let total = epochs.ok_or_else(|| config_err("epochs", 0, "required key is missing"))?;
            LrScheduleSpec::three_step_scaled(total)
                .map_err(|err| config_err("lr_schedule", line, err.to_string()))?
        }
        "cyclic" => LrScheduleSpec::Cyclic {
            cycle_length,
            steps: LrScheduleSpec::cyclic().steps().to_vec(),
        },
        other => {
            return Err(config_err(
                "lr_schedule",
                line,
                format!("expected three_step, three_step_scaled or cyclic, found `{other}`"),
            ))
        }
    };
    let boundaries = e.list::<u64>("lr_boundaries", "integers")?;
    let rates = e.list::<f64>("lr_rates", "reals")?;
    if boundaries.is_some() || rates.is_some() {
        let old = spec.steps().to_vec();
        let boundaries = boundaries.unwrap_or_else(|| old.iter().map(|s| s.until_epoch).collect());
        let rates = rates.unwrap_or_else(|| old.iter().map(|s| s.rate).collect());
        if boundaries.len() != rates.len() {
            return Err(config_err(
                "lr_rates",
                e.line("lr_rates").max(e.line("lr_boundaries")),
                format!("{} rates for {} boundaries", rates.len(), boundaries.len()),
            ));
        }
        let steps: Vec<LrStep> = boundaries
            .into_iter()
            .zip(rates)
            .map(|(until_epoch, rate)| LrStep { until_epoch, rate })
            .collect();
        spec = match spec {
            LrScheduleSpec::ThreeStep { .. } => LrScheduleSpec::ThreeStep { steps },
            LrScheduleSpec::Cyclic { cycle_length, .. } => LrScheduleSpec::Cyclic {
                cycle_length,
                steps,
            },
        };
    }
    spec.validate().map_err(|err| {
        let key = if e.raw("lr_boundaries").is_some() {
            "lr_boundaries"
        } else {
            "lr_schedule"
        };
        config_err(key, e.line(key), err.to_string())
    })?;
    Ok(spec)
}

fn parse_keep_kind(e: &Entries, cycle_length: u64) -> Result<KeepRatioKind> {
    let tau = e.real("tau", DEFAULT_TAU)?;
    e.check("tau", tau > 0.0, "must be > 0")?;
    let gate_epochs = e.count("gate_epochs", DEFAULT_GATE_EPOCHS)?;
    e.check(
        "gate_epochs",
        gate_epochs >= 1 && gate_epochs <= cycle_length,
        "must be in [1, cycle_length]",
    )?;
    match e.raw("prune_schedule").map_or("linear", |(v, _)| v) {
        "linear" => Ok(KeepRatioKind::Linear),
        "exponential" => Ok(KeepRatioKind::Exponential { tau }),
        "cycle_gated_exponential" => Ok(KeepRatioKind::CycleGatedExponential {
            tau,
            cycle_length,
            gate_epochs,
        }),
        other => Err(config_err(
            "prune_schedule",
            e.line("prune_schedule"),
            format!("expected linear, exponential or cycle_gated_exponential, found `{other}`"),
        )),
    }
}

fn parse_bool(e: &Entries, key: &str) -> Result<bool> {
    match e.raw(key) {
        None => Ok(false),
        Some(("true", _)) => Ok(true),
        Some(("false", _)) => Ok(false),
        Some((v, line)) => Err(config_err(
            key,
            line,
            format!("expected true or false, found `{v}`"),
        )),
    }
}

/// Parses config text. `base` anchors relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let e = Entries::parse(text)?;
    let network = parse_network(&e)?;
    let dataset = parse_dataset(&e, base)?;

    let batches_per_epoch: u64 = e.required("batches_per_epoch", "a positive integer")?;
    e.check(
        "batches_per_epoch",
        batches_per_epoch >= 1,
        "must be positive",
    )?;
    let cycle_length = e.count("cycle_length", 7u64)?;
    e.check("cycle_length", cycle_length >= 1, "must be positive")?;
    let num_cycles = e.count("num_cycles", 5u64)?;
    let explicit_epochs = e.get::<u64>("epochs", "a non-negative integer")?;
    let cyclic = matches!(e.raw("lr_schedule"), Some(("cyclic", _)));
    let lr_schedule = parse_lr(&e, cycle_length, explicit_epochs)?;
    let epochs = match explicit_epochs {
        Some(n) => n,
        None if cyclic => num_cycles * cycle_length,
        None => return Err(config_err("epochs", 0, "required key is missing")),
    };

    let mut c = ExperimentConfig::new(network, dataset, epochs, batches_per_epoch);
    c.cycle_length = cycle_length;
    c.num_cycles = num_cycles;
    c.lr_schedule = lr_schedule;
    c.keep_kind = parse_keep_kind(&e, cycle_length)?;

    c.batch_size = e.count("batch_size", c.batch_size)?;
    e.check("batch_size", c.batch_size >= 1, "must be positive")?;
    c.final_keep = e.real("final_keep", c.final_keep)?;
    e.check(
        "final_keep",
        c.final_keep > 0.0 && c.final_keep <= 1.0,
        "must be in (0, 1]",
    )?;
    c.method = match e.raw("prune_method").map_or("gmp", |(v, _)| v) {
        "gmp" => PruneStrategy::Gmp,
        "random" => PruneStrategy::Random,
        "block_gmp" => PruneStrategy::BlockGmp,
        other => {
            return Err(config_err(
                "prune_method",
                e.line("prune_method"),
                format!("expected gmp, random or block_gmp, found `{other}`"),
            ))
        }
    };
    c.momentum = e.real("momentum", c.momentum)?;
    e.check(
        "momentum",
        (0.0..1.0).contains(&c.momentum),
        "must be in [0, 1)",
    )?;
    c.weight_decay = e.real("weight_decay", c.weight_decay)?;
    e.check("weight_decay", c.weight_decay >= 0.0, "must be >= 0")?;
    c.selective_decay = parse_bool(&e, "selective_decay")?;
    e.check(
        "selective_decay",
        !c.selective_decay || c.method == PruneStrategy::BlockGmp,
        "requires prune_method = block_gmp",
    )?;
    c.decay_l0_cutoff = e.real("decay_l0_cutoff", c.decay_l0_cutoff)?;
    e.check("decay_l0_cutoff", c.decay_l0_cutoff >= 0.0, "must be >= 0")?;
    c.update_interval = e.count("update_interval", c.update_interval)?;
    e.check(
        "update_interval",
        c.update_interval >= 1,
        "must be positive",
    )?;
    c.initial_threshold = e.real("initial_threshold", c.initial_threshold)?;
    e.check(
        "initial_threshold",
        c.initial_threshold >= 0.0,
        "must be >= 0",
    )?;
    c.degenerate_check = match e.raw("degenerate_check").map_or("every_step", |(v, _)| v) {
        "every_step" => DegenerateCheck::EveryStep,
        "every_interval" => DegenerateCheck::EveryInterval,
        other => {
            return Err(config_err(
                "degenerate_check",
                e.line("degenerate_check"),
                format!("expected every_step or every_interval, found `{other}`"),
            ))
        }
    };
    c.seed = e.count("seed", c.seed)?;
    c.eval_every = e.count("eval_every", c.eval_every)?;
    e.check("eval_every", c.eval_every >= 1, "must be positive")?;

    if cyclic {
        e.check(
            "epochs",
            c.epochs == c.num_cycles * c.cycle_length,
            "cyclic runs need epochs = num_cycles * cycle_length",
        )?;
    }
    c.validate()?;
    Ok(c)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Serializes every field explicitly, so the output parses back to an equal
/// config regardless of defaults. Paths are written as stored.
pub fn config_to_string(c: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        writeln!(out, "{k} = {v}").expect("writing to a String cannot fail");
    };
    kv(
        "network",
        join(c.network.layers.iter().map(format_layer), ","),
    );
    kv("input_shape", join(&c.network.input_shape, "x"));
    match &c.dataset {
        DatasetSpec::SyntheticBlobs(b) => {
            kv("dataset", "synthetic_blobs".into());
            kv("dataset.classes", b.classes.to_string());
            kv("dataset.dims", b.dims.to_string());
            kv("dataset.samples", b.samples.to_string());
            kv("dataset.eval_samples", b.eval_samples.to_string());
            kv("dataset.noise", real(b.noise));
            kv("dataset.seed", b.seed.to_string());
        }
        DatasetSpec::Idx {
            images,
            labels,
            eval_images,
            eval_labels,
            mean,
            std,
            classes,
        } => {
            kv("dataset", "idx".into());
            kv("dataset.images", path_str(images));
            kv("dataset.labels", path_str(labels));
            if let Some(p) = eval_images {
                kv("dataset.eval_images", path_str(p));
            }
            if let Some(p) = eval_labels {
                kv("dataset.eval_labels", path_str(p));
            }
            kv("dataset.mean", real(*mean));
            kv("dataset.std", real(*std));
            if let Some(n) = classes {
                kv("dataset.classes", n.to_string());
            }
        }
    }
    kv("epochs", c.epochs.to_string());
    kv("batches_per_epoch", c.batches_per_epoch.to_string());
    kv("batch_size", c.batch_size.to_string());
    kv("cycle_length", c.cycle_length.to_string());
    kv("num_cycles", c.num_cycles.to_string());
    let steps = c.lr_schedule.steps();
    kv(
        "lr_schedule",
        match c.lr_schedule {
            LrScheduleSpec::ThreeStep { .. } => "three_step".into(),
            LrScheduleSpec::Cyclic { .. } => "cyclic".into(),
        },
    );
    kv(
        "lr_boundaries",
        join(steps.iter().map(|s| s.until_epoch), ","),
    );
    kv("lr_rates", join(steps.iter().map(|s| real(s.rate)), ","));
    match c.keep_kind {
        KeepRatioKind::Linear => kv("prune_schedule", "linear".into()),
        KeepRatioKind::Exponential { tau } => {
            kv("prune_schedule", "exponential".into());
            kv("tau", real(tau));
        }
        KeepRatioKind::CycleGatedExponential {
            tau, gate_epochs, ..
        } => {
            kv("prune_schedule", "cycle_gated_exponential".into());
            kv("tau", real(tau));
            kv("gate_epochs", gate_epochs.to_string());
        }
    }
    kv("final_keep", real(c.final_keep));
    kv(
        "prune_method",
        match c.method {
            PruneStrategy::Gmp => "gmp",
            PruneStrategy::Random => "random",
            PruneStrategy::BlockGmp => "block_gmp",
        }
        .into(),
    );
    kv("momentum", real(c.momentum));
    kv("weight_decay", real(c.weight_decay));
    kv("selective_decay", c.selective_decay.to_string());
    kv("decay_l0_cutoff", real(c.decay_l0_cutoff));
    kv("update_interval", c.update_interval.to_string());
    kv("initial_threshold", real(c.initial_threshold));
    kv(
        "degenerate_check",
        match c.degenerate_check {
            DegenerateCheck::EveryStep => "every_step",
            DegenerateCheck::EveryInterval => "every_interval",
        }
        .into(),
    );
    kv("seed", c.seed.to_string());
    kv("eval_every", c.eval_every.to_string());
    out
}

pub fn write_config(path: &Path, c: &ExperimentConfig) -> Result<()> {
    fs::write(path, config_to_string(c)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    const MINIMAL: &str =
        "network = dense:32:64, relu, dense:64:10\nbatches_per_epoch = 8\nepochs = 4\n";

    #[test]
    fn required_keys_only_gives_defaults() {
        let c = parse_config_str(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.update_interval, 100);
        assert_eq!(c.initial_threshold, 1e-4);
        assert_eq!(c.cycle_length, 7);
        assert_eq!(c.num_cycles, 5);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.final_keep, 0.15);
        assert_eq!(c.network.input_shape, vec![32]);
        assert_eq!(
            c.dataset,
            DatasetSpec::SyntheticBlobs(SyntheticBlobs::default())
        );
    }

    #[test]
    fn momentum_out_of_range_names_key_and_line() {
        let text = format!("{MINIMAL}momentum = 1.5\n");
        match parse_config_str(&text, Path::new(".")).unwrap_err() {
            Error::Config { key, line, .. } => {
                assert_eq!(key, "momentum");
                assert_eq!(line, 4);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_duplicate_and_type_errors() {
        let cases = [
            (format!("{MINIMAL}colour = red\n"), "colour", 4),
            (format!("{MINIMAL}epochs = 5\n"), "epochs", 4),
            (format!("{MINIMAL}seed = -3\n"), "seed", 4),
            (
                format!("{MINIMAL}selective_decay = yes\n"),
                "selective_decay",
                4,
            ),
            (
                "network = dense:3\nbatches_per_epoch = 1\nepochs = 1\n".to_string(),
                "network",
                1,
            ),
        ];
        for (text, want_key, want_line) in cases {
            match parse_config_str(&text, Path::new(".")).unwrap_err() {
                Error::Config { key, line, .. } => {
                    assert_eq!((key.as_str(), line), (want_key, want_line), "{text}");
                }
                other => panic!("unexpected error {other}"),
            }
        }
    }

    #[test]
    fn cyclic_derives_epochs() {
        let text =
            "network = dense:4:2\nbatches_per_epoch = 2\nlr_schedule = cyclic\nnum_cycles = 3\n";
        let c = parse_config_str(text, Path::new(".")).unwrap();
        assert_eq!(c.epochs, 21);
        assert_eq!(c.lr_schedule, LrScheduleSpec::cyclic());
    }

    #[test]
    fn relative_idx_paths_resolve_against_base() {
        let text = "network = flatten, dense:4:2\ninput_shape = 1x2x2\nbatches_per_epoch = 1\nepochs = 1\n\
                    dataset = idx\ndataset.images = img.idx\ndataset.labels = /abs/lbl.idx\n";
        let c = parse_config_str(text, Path::new("/data/run")).unwrap();
        match c.dataset {
            DatasetSpec::Idx { images, labels, .. } => {
                assert_eq!(images, PathBuf::from("/data/run/img.idx"));
                assert_eq!(labels, PathBuf::from("/abs/lbl.idx"));
            }
            _ => panic!("expected idx"),
        }
    }

    #[test]
    fn writer_round_trips() {
        let text = format!(
            "{MINIMAL}prune_schedule = exponential\ntau = 1.25\nweight_decay = 5e-5\nlr_schedule = three_step_scaled\n"
        );
        let c = parse_config_str(&text, Path::new(".")).unwrap();
        let back = parse_config_str(&config_to_string(&c), Path::new(".")).unwrap();
        assert_eq!(back, c);
    }
}
