//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shedlab_core::block::{block_gmp_topup, BlockMaskState, BlockPartition, PartitionTensor};
use shedlab_core::pruning::{gmp_topup, MaskState, PruneCause, WeightIndex};
use shedlab_core::tensor::{
    backward, forward, softmax_cross_entropy, LayerSpec, NetworkSpec, OptimizerState, Param,
    ParamStore, Tensor,
};

pub const GRAD_RTOL: f64 = 1e-4;
pub const GRAD_ATOL: f64 = 1e-8;
const FD_STEP: f64 = 1e-6;

fn conv(i: usize, o: usize, k: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel_h: k,
        kernel_w: k,
        stride,
        padding,
    }
}

fn dense(inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec::Dense { inputs, outputs }
}

/// Small networks that together exercise every layer type, including
/// strided and padded convolutions and both batch-norm input ranks.
pub fn gradcheck_networks() -> Vec<(&'static str, NetworkSpec)> {
    let net = |shape: Vec<usize>, layers| NetworkSpec::new(shape, layers).unwrap();
    vec![
        ("dense", net(vec![5], vec![dense(5, 3)])),
        (
            "dense+relu",
            net(vec![4], vec![dense(4, 6), LayerSpec::Relu, dense(6, 3)]),
        ),
        (
            "conv+flatten",
            net(
                vec![2, 5, 5],
                vec![conv(2, 3, 3, 1, 1), LayerSpec::Flatten, dense(75, 3)],
            ),
        ),
        (
            "strided conv",
            net(
                vec![3, 6, 5],
                vec![
                    conv(3, 2, 3, 2, 0),
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    dense(8, 4),
                ],
            ),
        ),
        (
            "conv+batchnorm",
            net(
                vec![2, 4, 4],
                vec![
                    conv(2, 5, 3, 1, 1),
                    LayerSpec::BatchNorm { channels: 5 },
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    dense(80, 3),
                ],
            ),
        ),
        (
            "dense+batchnorm",
            net(
                vec![6],
                vec![
                    dense(6, 7),
                    LayerSpec::BatchNorm { channels: 7 },
                    LayerSpec::Relu,
                    dense(7, 3),
                ],
            ),
        ),
    ]
}

fn mean_loss(net: &NetworkSpec, params: &ParamStore, x: &Tensor, labels: &[usize]) -> f64 {
    let (logits, _) = forward(net, params, x).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().loss
}

/// Compares every analytic parameter gradient of the mean cross-entropy with a
/// central finite difference. Returns the worst `|a - n| / (atol + rtol |n|)`.
pub fn gradient_check(net: &NetworkSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net.init_params(seed);
    for i in 0..params.len() {
        let nonprunable = !params.get(i).prunable;
        for v in params.tensor_mut(i).data_mut() {
            if nonprunable {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
    }
    let batch = 4;
    let classes = net.output_shape().unwrap()[0];
    let mut shape = vec![batch];
    shape.extend_from_slice(&net.input_shape);
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();

    let (logits, cache) = forward(net, &params, &x).unwrap();
    let loss = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = backward(net, &params, &cache, &loss.grad).unwrap();

    let mut worst: f64 = 0.0;
    for (p, grad) in grads.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = params.get(p).value.data()[j];
            params.tensor_mut(p).data_mut()[j] = orig + FD_STEP;
            let up = mean_loss(net, &params, &x, &labels);
            params.tensor_mut(p).data_mut()[j] = orig - FD_STEP;
            let down = mean_loss(net, &params, &x, &labels);
            params.tensor_mut(p).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = (grad.data()[j] - numeric).abs() / (GRAD_ATOL + GRAD_RTOL * numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

/// Magnitude with frequent exact ties.
fn tied_value(rng: &mut ChaCha8Rng) -> f64 {
    let mag = rng.gen_range(0..6) as f64 * 0.25;
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn random_store(rng: &mut ChaCha8Rng, shapes: &[Vec<usize>], ties: bool) -> ParamStore {
    let mut params = Vec::new();
    for (i, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if ties {
                    tied_value(rng)
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        params.push(Param {
            name: format!("w{i}"),
            value: Tensor::new(shape.clone(), data).unwrap(),
            prunable: true,
        });
        params.push(Param {
            name: format!("b{i}"),
            value: Tensor::new(vec![shape[0]], vec![0.5; shape[0]]).unwrap(),
            prunable: false,
        });
    }
    ParamStore::new(params)
}

/// Smallest prune count that brings `kept / total` to at most `r`.
fn oracle_count(kept: usize, total: usize, r: f64) -> usize {
    (0..=kept)
        .find(|c| (kept - c) as f64 <= r * total as f64 + 1e-9)
        .unwrap_or(kept)
}

fn random_target(rng: &mut ChaCha8Rng, total: usize) -> f64 {
    if rng.gen_bool(0.3) {
        rng.gen_range(1..=total) as f64 / total as f64
    } else {
        rng.gen_range(0.01..=1.0)
    }
}

/// One random GMP top-up instance checked against a full sort.
pub fn gmp_oracle_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let tensors = rng.gen_range(1..=3);
    let shapes: Vec<Vec<usize>> = (0..tensors)
        .map(|_| vec![rng.gen_range(1..=40), rng.gen_range(1..=60)])
        .collect();
    let ties = rng.gen_bool(0.5);
    let mut params = random_store(rng, &shapes, ties);
    let mut opt = OptimizerState::new(&params, 0.9, 0.0).unwrap();
    let theta0 = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(0.0..0.5)
    };
    let mut mask = MaskState::new(&params, theta0);
    for idx in mask.kept_indices() {
        if rng.gen_bool(0.1) {
            mask.prune(idx, PruneCause::Shed, &mut params, &mut opt);
        }
    }
    let r = random_target(rng, mask.total());

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (t, mt) in mask.tensors().iter().enumerate() {
        let data = params.get(mt.param_index).value.data();
        for (o, &k) in mt.kept.iter().enumerate() {
            if k {
                candidates.push((data[o].abs(), t, o));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let count = oracle_count(mask.kept(), mask.total(), r);
    let mut expected: Vec<WeightIndex> = candidates[..count]
        .iter()
        .map(|&(_, tensor, offset)| WeightIndex { tensor, offset })
        .collect();
    expected.sort();
    let expected_theta = candidates[..count]
        .iter()
        .map(|c| c.0)
        .fold(theta0, f64::max);

    let mut got = gmp_topup(&mut params, &mut opt, &mut mask, r).map_err(|e| e.to_string())?;
    got.sort();
    if got != expected {
        return Err(format!(
            "pruned set differs: r={r}, {} vs {}",
            got.len(),
            expected.len()
        ));
    }
    if mask.threshold() != expected_theta {
        return Err(format!("theta {} != {}", mask.threshold(), expected_theta));
    }
    for w in &expected {
        let p = mask.tensors()[w.tensor].param_index;
        if mask.is_kept(*w) || params.get(p).value.data()[w.offset] != 0.0 {
            return Err(format!("{w:?} not pruned and zeroed"));
        }
    }
    Ok(())
}

/// Block enumeration written independently of the library: out channel,
/// then input-channel group of four, then spatial position.
fn oracle_blocks(shape: &[usize]) -> Vec<Vec<usize>> {
    let (o, i, s) = match shape {
        [o, i] => (*o, *i, 1),
        [o, i, kh, kw] => (*o, *i, kh * kw),
        _ => unreachable!(),
    };
    let mut blocks = Vec::new();
    for out in 0..o {
        for g in (0..i).step_by(4) {
            for sp in 0..s {
                blocks.push(
                    (g..(g + 4).min(i))
                        .map(|c| (out * i + c) * s + sp)
                        .collect(),
                );
            }
        }
    }
    blocks
}

/// One random block top-up instance checked against a full sort.
pub fn block_oracle_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let tensors = rng.gen_range(1..=3);
    let shapes: Vec<Vec<usize>> = (0..tensors)
        .map(|_| {
            if rng.gen_bool(0.5) {
                vec![rng.gen_range(1..=30), rng.gen_range(1..=30)]
            } else {
                let k = rng.gen_range(1..=3);
                vec![rng.gen_range(1..=8), rng.gen_range(1..=10), k, k]
            }
        })
        .collect();
    let ties = rng.gen_bool(0.5);
    let mut params = random_store(rng, &shapes, ties);
    let partition = BlockPartition::from_shapes(
        shapes
            .iter()
            .enumerate()
            .map(|(t, shape)| PartitionTensor {
                name: format!("w{t}"),
                param_index: 2 * t,
                shape: shape.clone(),
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;

    let mut expected_blocks = Vec::new();
    for (t, shape) in shapes.iter().enumerate() {
        for offsets in oracle_blocks(shape) {
            expected_blocks.push((t, offsets));
        }
    }
    let got_blocks: Vec<(usize, Vec<usize>)> = partition
        .blocks()
        .iter()
        .map(|b| (b.tensor, b.offsets().collect()))
        .collect();
    if got_blocks != expected_blocks {
        return Err("partition differs from the reference enumeration".into());
    }

    let mut opt = OptimizerState::new(&params, 0.9, 0.0).unwrap();
    let mut mask = MaskState::new(&params, 0.0);
    let theta0 = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(0.0..1.0)
    };
    let mut bmask = BlockMaskState::new(&partition, theta0);
    for b in 0..partition.len() {
        if rng.gen_bool(0.1) {
            bmask.prune(
                b,
                PruneCause::Shed,
                &partition,
                &mut params,
                &mut opt,
                &mut mask,
            );
        }
    }
    let r = random_target(rng, partition.len());

    let l2 = |t: usize, offsets: &[usize]| {
        let data = params.get(2 * t).value.data();
        offsets
            .iter()
            .map(|&o| data[o] * data[o])
            .sum::<f64>()
            .sqrt()
    };
    let mut candidates: Vec<(f64, usize, usize, usize)> = expected_blocks
        .iter()
        .enumerate()
        .filter(|(b, _)| bmask.is_kept(*b))
        .map(|(b, (t, offsets))| (l2(*t, offsets), *t, offsets[0], b))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let count = oracle_count(bmask.kept_count(), bmask.total(), r);
    let mut expected: Vec<usize> = candidates[..count].iter().map(|c| c.3).collect();
    expected.sort();
    let expected_theta = candidates[..count]
        .iter()
        .map(|c| c.0)
        .fold(theta0, f64::max);

    let mut got = block_gmp_topup(&mut params, &mut opt, &mut mask, &mut bmask, &partition, r)
        .map_err(|e| e.to_string())?;
    got.sort();
    if got != expected {
        return Err(format!(
            "pruned blocks differ: r={r}, {got:?} vs {expected:?}"
        ));
    }
    if bmask.threshold() != expected_theta {
        return Err(format!(
            "block theta {} != {}",
            bmask.threshold(),
            expected_theta
        ));
    }
    for &b in &expected {
        let (t, offsets) = &expected_blocks[b];
        if offsets.iter().any(|&o| {
            mask.is_kept(WeightIndex {
                tensor: *t,
                offset: o,
            }) || params.get(2 * t).value.data()[o] != 0.0
        }) {
            return Err(format!("block {b} weights not pruned and zeroed"));
        }
    }
    Ok(())
}
