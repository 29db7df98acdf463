//! 4x1 semi-structured pruning.
//!
//! Each block holds up to four weights that share an output channel and a
//! spatial position and span adjacent input channels. Blocks are ranked by
//! their L2 norm and pruned as a whole; weights inside a kept block are never
//! pruned individually.

use crate::error::{Error, Result};
use crate::pruning::{prune_count, MaskState, PruneCause, WeightIndex};
use crate::tensor::{DecayOverrides, NetworkSpec, OptimizerState, ParamStore};

pub const BLOCK_SIZE: usize = 4;

/// Weight-decay multipliers indexed by a full block's L0 norm.
pub const DECAY_MULTIPLIERS: [f64; BLOCK_SIZE + 1] = [0.0, 4.0, 2.0, 1.0, 0.0];

/// Default base coefficient for selective decay.
pub const SELECTIVE_DECAY_BASE: f64 = 1e-4;

/// A run of weights `start, start + stride, ...` (`len` of them) inside one
/// prunable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub tensor: usize,
    pub start: usize,
    pub stride: usize,
    pub len: usize,
}

impl Block {
    pub fn offsets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |i| self.start + i * self.stride)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTensor {
    pub name: String,
    pub param_index: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    tensors: Vec<PartitionTensor>,
    blocks: Vec<Block>,
}

impl BlockPartition {
    /// Partitions weight tensors of shape `(out, in)` or `(out, in, kh, kw)`
    /// into blocks along `in`. Tensors are given as (name, parameter index,
    /// shape), in prunable registration order.
    pub fn from_shapes(tensors: Vec<PartitionTensor>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::EmptyInput("no prunable tensors to partition".into()));
        }
        let mut blocks = Vec::new();
        for (t, pt) in tensors.iter().enumerate() {
            let (outputs, inputs, spatial) = match pt.shape.as_slice() {
                [o, i] => (*o, *i, 1),
                [o, i, kh, kw] => (*o, *i, kh * kw),
                other => {
                    return Err(Error::Structural(format!(
                        "cannot block-partition `{}` with shape {other:?}",
                        pt.name
                    )))
                }
            };
            for o in 0..outputs {
                for c0 in (0..inputs).step_by(BLOCK_SIZE) {
                    let len = BLOCK_SIZE.min(inputs - c0);
                    for s in 0..spatial {
                        blocks.push(Block {
                            tensor: t,
                            start: (o * inputs + c0) * spatial + s,
                            stride: spatial,
                            len,
                        });
                    }
                }
            }
        }
        Ok(Self { tensors, blocks })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tensors(&self) -> &[PartitionTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Weights in the block as read from `params`.
    pub fn values<'a>(
        &'a self,
        params: &'a ParamStore,
        block: &'a Block,
    ) -> impl Iterator<Item = f64> + 'a {
        let data = params
            .get(self.tensors[block.tensor].param_index)
            .value
            .data();
        block.offsets().map(move |o| data[o])
    }
}

/// Block partition of every prunable tensor in `net`.
pub fn build_partition(net: &NetworkSpec) -> Result<BlockPartition> {
    let tensors = net
        .param_layout()
        .into_iter()
        .enumerate()
        .filter(|(_, (_, _, prunable))| *prunable)
        .map(|(param_index, (name, shape, _))| PartitionTensor {
            name,
            param_index,
            shape,
        })
        .collect();
    BlockPartition::from_shapes(tensors)
}

/// Euclidean norm of the block's current weights.
pub fn block_l2(params: &ParamStore, partition: &BlockPartition, block: &Block) -> f64 {
    partition
        .values(params, block)
        .map(|w| w * w)
        .sum::<f64>()
        .sqrt()
}

/// Number of elements with `|w| >= cutoff`.
pub fn block_l0(
    params: &ParamStore,
    partition: &BlockPartition,
    block: &Block,
    cutoff: f64,
) -> usize {
    partition
        .values(params, block)
        .filter(|w| w.abs() >= cutoff)
        .count()
}

/// Block-granularity mask. Counters are in blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMaskState {
    kept: Vec<bool>,
    threshold: f64,
    largest_pruned: f64,
    kept_count: usize,
    explicitly_pruned: usize,
    shed: usize,
}

impl BlockMaskState {
    pub fn new(partition: &BlockPartition, threshold: f64) -> Self {
        Self {
            kept: vec![true; partition.len()],
            threshold: threshold.max(0.0),
            largest_pruned: 0.0,
            kept_count: partition.len(),
            explicitly_pruned: 0,
            shed: 0,
        }
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn is_kept(&self, block: usize) -> bool {
        self.kept[block]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn total(&self) -> usize {
        self.kept.len()
    }

    pub fn kept_count(&self) -> usize {
        self.kept_count
    }

    pub fn explicitly_pruned(&self) -> usize {
        self.explicitly_pruned
    }

    pub fn shed(&self) -> usize {
        self.shed
    }

    /// Kept blocks over all blocks.
    pub fn keep_ratio(&self) -> f64 {
        if self.kept.is_empty() {
            return 1.0;
        }
        self.kept_count as f64 / self.kept.len() as f64
    }

    /// Prunes a whole block: flips its bit, prunes its weights in the
    /// weight-level mask and zeroes them with their velocities.
    pub fn prune(
        &mut self,
        block: usize,
        cause: PruneCause,
        partition: &BlockPartition,
        params: &mut ParamStore,
        opt: &mut OptimizerState,
        mask: &mut MaskState,
    ) -> bool {
        if !self.kept[block] {
            return false;
        }
        self.kept[block] = false;
        self.kept_count -= 1;
        match cause {
            PruneCause::Explicit => self.explicitly_pruned += 1,
            PruneCause::Shed => self.shed += 1,
        }
        let b = partition.blocks[block];
        for offset in b.offsets() {
            mask.prune(
                WeightIndex {
                    tensor: b.tensor,
                    offset,
                },
                cause,
                params,
                opt,
            );
        }
        true
    }
}

/// Block analogue of GMP top-up: prunes the smallest-L2 kept blocks until the
/// block keep-ratio is at most `r_target`, then raises the block threshold to
/// the largest L2 norm pruned so far. Ties go to the lower
/// (tensor, first offset).
pub fn block_gmp_topup(
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    mask: &mut MaskState,
    bmask: &mut BlockMaskState,
    partition: &BlockPartition,
    r_target: f64,
) -> Result<Vec<usize>> {
    if !(r_target > 0.0 && r_target <= 1.0) {
        return Err(Error::range("r_target", r_target, "(0, 1]"));
    }
    let count = prune_count(bmask.kept_count, bmask.total(), r_target);
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut candidates: Vec<(f64, usize)> = bmask
        .kept
        .iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(i, _)| (block_l2(params, partition, &partition.blocks[i]), i))
        .collect();
    let key = |i: usize| {
        let b = &partition.blocks[i];
        (b.tensor, b.start)
    };
    let order = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.total_cmp(&b.0).then_with(|| key(a.1).cmp(&key(b.1)))
    };
    if count < candidates.len() {
        candidates.select_nth_unstable_by(count - 1, order);
        candidates.truncate(count);
    }
    candidates.sort_unstable_by_key(|c| c.1);

    let mut pruned = Vec::with_capacity(count);
    for (norm, block) in candidates {
        bmask.prune(block, PruneCause::Explicit, partition, params, opt, mask);
        bmask.largest_pruned = bmask.largest_pruned.max(norm);
        pruned.push(block);
    }
    bmask.threshold = bmask.threshold.max(bmask.largest_pruned);
    Ok(pruned)
}

/// Sheds every kept block whose L2 norm is strictly below the block
/// threshold.
pub fn detect_degenerate_blocks(
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    mask: &mut MaskState,
    bmask: &mut BlockMaskState,
    partition: &BlockPartition,
) -> Vec<usize> {
    let threshold = bmask.threshold;
    if threshold <= 0.0 {
        return Vec::new();
    }
    let shed: Vec<usize> = (0..partition.len())
        .filter(|&i| bmask.kept[i] && block_l2(params, partition, &partition.blocks[i]) < threshold)
        .collect();
    for &block in &shed {
        bmask.prune(block, PruneCause::Shed, partition, params, opt, mask);
    }
    shed
}

/// Selective-decay multiplier for a block of `size` elements with `l0`
/// non-degenerate ones.
///
/// Full blocks use `0, 4, 2, 1, 0`. For shorter tail blocks an empty or full
/// L0 still maps to 0; interior counts are rescaled to the four-element axis
/// (`4 * l0 / size`) and read off the piecewise-linear curve through
/// `(1, 4), (2, 2), (3, 1)`.
pub fn decay_multiplier(l0: usize, size: usize) -> f64 {
    if l0 == 0 || l0 >= size {
        return 0.0;
    }
    if size == BLOCK_SIZE {
        return DECAY_MULTIPLIERS[l0];
    }
    let x = (BLOCK_SIZE as f64 * l0 as f64 / size as f64).clamp(1.0, 3.0);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(3);
    let frac = x - lo as f64;
    DECAY_MULTIPLIERS[lo] * (1.0 - frac) + DECAY_MULTIPLIERS[hi] * frac
}

/// Per-weight decay for prunable tensors: every weight of a kept block with
/// L0 norm `n` gets `decay_multiplier(n) * base`; pruned blocks get 0.
pub fn selective_decay(
    bmask: &BlockMaskState,
    partition: &BlockPartition,
    params: &ParamStore,
    base: f64,
    cutoff: f64,
) -> DecayOverrides {
    let mut per_tensor: Vec<Vec<f64>> = partition
        .tensors
        .iter()
        .map(|t| vec![0.0; params.get(t.param_index).value.len()])
        .collect();
    for (i, block) in partition.blocks.iter().enumerate() {
        if !bmask.kept[i] {
            continue;
        }
        let l0 = block_l0(params, partition, block, cutoff);
        let decay = decay_multiplier(l0, block.len) * base;
        let dst = &mut per_tensor[block.tensor];
        for offset in block.offsets() {
            dst[offset] = decay;
        }
    }
    let mut overrides = DecayOverrides::new(params.len());
    for (t, decays) in partition.tensors.iter().zip(per_tensor) {
        overrides.set(t.param_index, decays);
    }
    overrides
}
