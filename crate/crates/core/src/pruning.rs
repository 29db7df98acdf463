//! Unstructured mask lifecycle: degenerate-weight shedding, magnitude and
//! random top-up, and keep-ratio accounting.
//!
//! A kept weight whose magnitude falls strictly below the global threshold is
//! shed. At scheduled points the mask is topped up so that the actual
//! keep-ratio does not exceed the target; GMP then raises the threshold to the
//! largest magnitude it has pruned so far. Pruning is permanent.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{OptimizerState, ParamStore};

/// Initial magnitude threshold for degenerate-weight detection.
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// Position of a prunable weight: `tensor` counts prunable tensors in
/// registration order, `offset` is the flat index inside that tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeightIndex {
    pub tensor: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneCause {
    /// Removed by a scheduled top-up.
    Explicit,
    /// Removed because it became degenerate during training.
    Shed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMethod {
    Gmp,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor {
    pub name: String,
    pub param_index: usize,
    pub kept: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskState {
    tensors: Vec<MaskTensor>,
    by_param: Vec<Option<usize>>,
    threshold: f64,
    largest_pruned: f64,
    total: usize,
    kept: usize,
    explicitly_pruned: usize,
    shed: usize,
}

impl MaskState {
    /// Fresh mask with every prunable weight kept.
    pub fn new(params: &ParamStore, threshold: f64) -> Self {
        let mut tensors = Vec::new();
        let mut by_param = vec![None; params.len()];
        for (i, p) in params.iter().enumerate().filter(|(_, p)| p.prunable) {
            by_param[i] = Some(tensors.len());
            tensors.push(MaskTensor {
                name: p.name.clone(),
                param_index: i,
                kept: vec![true; p.value.len()],
            });
        }
        let total = tensors.iter().map(|t| t.kept.len()).sum();
        Self {
            tensors,
            by_param,
            threshold: threshold.max(0.0),
            largest_pruned: 0.0,
            total,
            kept: total,
            explicitly_pruned: 0,
            shed: 0,
        }
    }

    pub fn tensors(&self) -> &[MaskTensor] {
        &self.tensors
    }

    pub fn kept_for_param(&self, param: usize) -> Option<&[bool]> {
        self.by_param
            .get(param)
            .copied()
            .flatten()
            .map(|t| self.tensors[t].kept.as_slice())
    }

    pub fn is_kept(&self, index: WeightIndex) -> bool {
        self.tensors[index.tensor].kept[index.offset]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Raises the threshold; it never decreases.
    pub fn raise_threshold(&mut self, value: f64) {
        self.threshold = self.threshold.max(value);
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn explicitly_pruned(&self) -> usize {
        self.explicitly_pruned
    }

    pub fn shed(&self) -> usize {
        self.shed
    }

    /// Marks a weight as pruned. Returns `false` if it already was.
    pub fn mark_pruned(&mut self, index: WeightIndex, cause: PruneCause) -> bool {
        let slot = &mut self.tensors[index.tensor].kept[index.offset];
        if !*slot {
            return false;
        }
        *slot = false;
        self.kept -= 1;
        match cause {
            PruneCause::Explicit => self.explicitly_pruned += 1,
            PruneCause::Shed => self.shed += 1,
        }
        true
    }

    /// Indices of all kept weights in (tensor, offset) order.
    pub fn kept_indices(&self) -> Vec<WeightIndex> {
        let mut out = Vec::with_capacity(self.kept);
        for (t, mt) in self.tensors.iter().enumerate() {
            out.extend(
                mt.kept
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k)
                    .map(|(offset, _)| WeightIndex { tensor: t, offset }),
            );
        }
        out
    }

    fn zero(&self, index: WeightIndex, params: &mut ParamStore, opt: &mut OptimizerState) {
        let p = self.tensors[index.tensor].param_index;
        params.tensor_mut(p).data_mut()[index.offset] = 0.0;
        opt.velocity_mut(p).data_mut()[index.offset] = 0.0;
    }

    /// Prunes a weight and zeroes it together with its velocity.
    pub fn prune(
        &mut self,
        index: WeightIndex,
        cause: PruneCause,
        params: &mut ParamStore,
        opt: &mut OptimizerState,
    ) -> bool {
        let changed = self.mark_pruned(index, cause);
        if changed {
            self.zero(index, params, opt);
        }
        changed
    }
}

/// Actual keep-ratio `K / N`.
pub fn keep_ratio(mask: &MaskState) -> f64 {
    if mask.total == 0 {
        return 1.0;
    }
    mask.kept as f64 / mask.total as f64
}

fn check_target(r_target: f64) -> Result<()> {
    if !(r_target > 0.0 && r_target <= 1.0) {
        return Err(Error::range("r_target", r_target, "(0, 1]"));
    }
    Ok(())
}

/// `ceil((kept/total - r_target) * total)`, computed as
/// `kept - floor(r_target * total)` with a small tolerance so that products
/// like `0.3 * 10` round to the intended integer.
pub fn prune_count(kept: usize, total: usize, r_target: f64) -> usize {
    let allowed = r_target * total as f64;
    let mut floor = allowed.floor();
    if allowed - floor > 1.0 - 1e-9 * allowed.max(1.0) {
        floor += 1.0;
    }
    kept.saturating_sub(floor as usize)
}

/// Sheds every kept weight with `|w| < threshold`. The threshold itself is
/// left unchanged.
pub fn detect_degenerate(
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    mask: &mut MaskState,
) -> Vec<WeightIndex> {
    let threshold = mask.threshold;
    if threshold <= 0.0 {
        return Vec::new();
    }
    let mut shed = Vec::new();
    for (t, mt) in mask.tensors.iter().enumerate() {
        let w = params.get(mt.param_index).value.data();
        for (offset, (&k, &v)) in mt.kept.iter().zip(w).enumerate() {
            if k && v.abs() < threshold {
                shed.push(WeightIndex { tensor: t, offset });
            }
        }
    }
    for &index in &shed {
        mask.prune(index, PruneCause::Shed, params, opt);
    }
    shed
}

/// Global magnitude top-up: removes the smallest-magnitude kept weights until
/// the keep-ratio is at most `r_target`, then raises the threshold to the
/// largest magnitude pruned so far. Ties go to the lower (tensor, offset).
pub fn gmp_topup(
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    mask: &mut MaskState,
    r_target: f64,
) -> Result<Vec<WeightIndex>> {
    check_target(r_target)?;
    let count = prune_count(mask.kept, mask.total, r_target);
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut candidates: Vec<(f64, WeightIndex)> = mask
        .kept_indices()
        .into_iter()
        .map(|idx| {
            let p = mask.tensors[idx.tensor].param_index;
            (params.get(p).value.data()[idx.offset].abs(), idx)
        })
        .collect();
    let order = |a: &(f64, WeightIndex), b: &(f64, WeightIndex)| {
        a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
    };
    if count < candidates.len() {
        candidates.select_nth_unstable_by(count - 1, order);
        candidates.truncate(count);
    }
    candidates.sort_unstable_by_key(|c| c.1);

    let mut pruned = Vec::with_capacity(count);
    for (magnitude, index) in candidates {
        mask.prune(index, PruneCause::Explicit, params, opt);
        mask.largest_pruned = mask.largest_pruned.max(magnitude);
        pruned.push(index);
    }
    let largest = mask.largest_pruned;
    mask.raise_threshold(largest);
    Ok(pruned)
}

/// Random top-up: the same count as [`gmp_topup`], drawn uniformly without
/// replacement from the kept weights. The threshold is not touched.
pub fn random_topup<R: Rng + ?Sized>(
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    mask: &mut MaskState,
    r_target: f64,
    rng: &mut R,
) -> Result<Vec<WeightIndex>> {
    check_target(r_target)?;
    let count = prune_count(mask.kept, mask.total, r_target);
    if count == 0 {
        return Ok(Vec::new());
    }
    let kept = mask.kept_indices();
    let mut pruned: Vec<WeightIndex> = rand::seq::index::sample(rng, kept.len(), count)
        .into_iter()
        .map(|i| kept[i])
        .collect();
    pruned.sort_unstable();
    for &index in &pruned {
        mask.prune(index, PruneCause::Explicit, params, opt);
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Param, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(values: &[f64]) -> ParamStore {
        ParamStore::new(vec![
            Param {
                name: "w".into(),
                value: Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
                prunable: true,
            },
            Param {
                name: "b".into(),
                value: Tensor::new(vec![1], vec![0.0]).unwrap(),
                prunable: false,
            },
        ])
    }

    fn setup(values: &[f64]) -> (ParamStore, OptimizerState, MaskState) {
        let params = store(values);
        let opt = OptimizerState::new(&params, 0.9, 0.0).unwrap();
        let mask = MaskState::new(&params, DEFAULT_THRESHOLD);
        (params, opt, mask)
    }

    fn offsets(v: &[WeightIndex]) -> Vec<usize> {
        v.iter().map(|i| i.offset).collect()
    }

    const TEN: [f64; 10] = [0.5, -0.3, 0.1, -0.05, 0.2, 0.4, -0.15, 0.25, 0.35, -0.45];

    #[test]
    fn detect_degenerate_example() {
        let (mut params, mut opt, mut mask) = setup(&[0.5, 5e-5, -2e-4]);
        opt.velocity_mut(0).data_mut()[1] = 0.7;
        let shed = detect_degenerate(&mut params, &mut opt, &mut mask);
        assert_eq!(offsets(&shed), vec![1]);
        assert_eq!(mask.shed(), 1);
        assert_eq!(params.get(0).value.data()[1], 0.0);
        assert_eq!(opt.velocity(0).data()[1], 0.0);
        assert_eq!(mask.threshold(), DEFAULT_THRESHOLD);
        // idempotent
        assert!(detect_degenerate(&mut params, &mut opt, &mut mask).is_empty());
    }

    #[test]
    fn detect_degenerate_edges() {
        let (mut params, mut opt, mut mask) = setup(&[0.5, 1e-4, -2e-4]);
        assert!(detect_degenerate(&mut params, &mut opt, &mut mask).is_empty());
        let params0 = store(&[0.0, 0.0]);
        let mut opt0 = OptimizerState::new(&params0, 0.0, 0.0).unwrap();
        let mut mask0 = MaskState::new(&params0, 0.0);
        let mut params0 = params0;
        assert!(detect_degenerate(&mut params0, &mut opt0, &mut mask0).is_empty());
    }

    #[test]
    fn gmp_topup_example() {
        let (mut params, mut opt, mut mask) = setup(&TEN);
        let pruned = gmp_topup(&mut params, &mut opt, &mut mask, 0.5).unwrap();
        let mut magnitudes: Vec<f64> = pruned.iter().map(|i| TEN[i.offset].abs()).collect();
        magnitudes.sort_by(f64::total_cmp);
        assert_eq!(magnitudes, vec![0.05, 0.1, 0.15, 0.2, 0.25]);
        let kept: Vec<f64> = mask
            .kept_indices()
            .iter()
            .map(|i| params.get(0).value.data()[i.offset])
            .collect();
        assert_eq!(kept, vec![0.5, -0.3, 0.4, 0.35, -0.45]);
        assert_eq!(mask.threshold(), 0.25);
        assert_eq!(keep_ratio(&mask), 0.5);
        assert_eq!(mask.explicitly_pruned(), 5);
    }

    #[test]
    fn gmp_topup_noop_cases() {
        let (mut params, mut opt, mut mask) = setup(&TEN);
        assert!(gmp_topup(&mut params, &mut opt, &mut mask, 1.0)
            .unwrap()
            .is_empty());
        gmp_topup(&mut params, &mut opt, &mut mask, 0.5).unwrap();
        let theta = mask.threshold();
        assert!(gmp_topup(&mut params, &mut opt, &mut mask, 0.5)
            .unwrap()
            .is_empty());
        assert_eq!(mask.threshold(), theta);
        assert!(gmp_topup(&mut params, &mut opt, &mut mask, 0.0).is_err());
        assert!(gmp_topup(&mut params, &mut opt, &mut mask, 1.1).is_err());
    }

    #[test]
    fn random_topup_count_and_threshold() {
        let (mut params, mut opt, mut mask) = setup(&TEN);
        for offset in 0..3 {
            mask.prune(
                WeightIndex { tensor: 0, offset },
                PruneCause::Explicit,
                &mut params,
                &mut opt,
            );
        }
        assert_eq!(keep_ratio(&mask), 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pruned = random_topup(&mut params, &mut opt, &mut mask, 0.5, &mut rng).unwrap();
        assert_eq!(pruned.len(), 2);
        assert!(pruned.iter().all(|i| i.offset >= 3));
        assert_eq!(mask.threshold(), DEFAULT_THRESHOLD);
        assert!(
            random_topup(&mut params, &mut opt, &mut mask, 0.6, &mut rng)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn random_topup_is_seeded() {
        let run = || {
            let (mut params, mut opt, mut mask) = setup(&TEN);
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            random_topup(&mut params, &mut opt, &mut mask, 0.4, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn keep_ratio_counts() {
        let (mut params, mut opt, mut mask) = setup(&TEN);
        assert_eq!(keep_ratio(&mask), 1.0);
        for offset in 0..3 {
            mask.prune(
                WeightIndex { tensor: 0, offset },
                PruneCause::Shed,
                &mut params,
                &mut opt,
            );
        }
        assert_eq!(keep_ratio(&mask), 0.7);
        for offset in 0..10 {
            mask.prune(
                WeightIndex { tensor: 0, offset },
                PruneCause::Explicit,
                &mut params,
                &mut opt,
            );
        }
        assert_eq!(keep_ratio(&mask), 0.0);
        assert_eq!(
            mask.kept() + mask.explicitly_pruned() + mask.shed(),
            mask.total()
        );
    }

    #[test]
    fn prune_count_handles_rounding() {
        assert_eq!(prune_count(10, 10, 0.3), 7);
        assert_eq!(prune_count(10, 10, 0.7), 3);
        assert_eq!(prune_count(7, 10, 0.5), 2);
        assert_eq!(prune_count(5, 10, 0.5), 0);
        assert_eq!(prune_count(3, 10, 0.5), 0);
        assert_eq!(prune_count(100, 100, 0.155), 85);
    }
}
