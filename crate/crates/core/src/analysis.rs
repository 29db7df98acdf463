//! Post-hoc measurements of shedding: mask overlap, the L0 distribution of
//! kept blocks, exponential fits of keep-ratio traces and shed attribution.

use crate::block::{block_l0, BlockPartition, BLOCK_SIZE};
use crate::error::{Error, Result};
use crate::harness::RunTrace;
use crate::io::snapshot::MaskSnapshot;
use crate::tensor::ParamStore;

pub const DEFAULT_PMF_CUTOFF: f64 = 6e-3;
const FIT_GRID_POINTS: usize = 400;
const FIT_MIN_ROWS: usize = 4;

/// Intersection over union of the kept sets; 1.0 when both are empty.
pub fn iou(a: &MaskSnapshot, b: &MaskSnapshot) -> Result<f64> {
    if a.granularity != b.granularity || a.tensors.len() != b.tensors.len() {
        return Err(Error::Structural("snapshots have different layouts".into()));
    }
    for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
        if ta.name != tb.name || ta.kept.len() != tb.kept.len() {
            return Err(Error::Structural(format!(
                "tensor `{}` ({} entries) does not match `{}` ({} entries)",
                ta.name,
                ta.kept.len(),
                tb.name,
                tb.kept.len()
            )));
        }
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.flat().zip(b.flat()) {
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Distribution of L0 over kept blocks, indexed by L0 in `0..=4`. Ragged
/// blocks are counted by their raw L0.
pub fn kept_block_l0_pmf(
    params: &ParamStore,
    partition: &BlockPartition,
    kept: &[bool],
    cutoff: f64,
) -> Result<[f64; BLOCK_SIZE + 1]> {
    if kept.len() != partition.len() {
        return Err(Error::Structural(format!(
            "{} block flags for a partition of {} blocks",
            kept.len(),
            partition.len()
        )));
    }
    let mut counts = [0u64; BLOCK_SIZE + 1];
    for (block, _) in partition.blocks().iter().zip(kept).filter(|(_, &k)| k) {
        counts[block_l0(params, partition, block, cutoff)] += 1;
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput("no kept blocks".into()));
    }
    Ok(counts.map(|c| c as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub asymptote: f64,
    pub tau: f64,
    pub initial: f64,
    /// Euclidean norm of the residuals in keep-ratio space.
    pub residual_norm: f64,
    pub r_squared: f64,
}

/// Least-squares `(asymptote, amplitude, sse)` for a fixed `tau`, with the
/// asymptote held at or above zero. `None` unless the fit decays.
fn fit_for_tau(ts: &[f64], rho: &[f64], tau: f64) -> Option<(f64, f64, f64)> {
    let xs: Vec<f64> = ts.iter().map(|t| (-t / tau).exp()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = rho.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(rho) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let mut b = sxy / sxx;
    let mut a = my - b * mx;
    if a < 0.0 {
        a = 0.0;
        b = xs.iter().zip(rho).map(|(x, y)| x * y).sum::<f64>()
            / xs.iter().map(|x| x * x).sum::<f64>();
    }
    if !(b > 0.0) {
        return None;
    }
    let sse = xs
        .iter()
        .zip(rho)
        .map(|(x, y)| {
            let e = y - (a + b * x);
            e * e
        })
        .sum();
    Some((a, b, sse))
}

/// Fits `rho(t) = a + (rho0 - a) exp(-t / tau)` by least squares in
/// keep-ratio space: a log-spaced scan over `tau` with the linear
/// coefficients solved in closed form, then golden-section refinement.
pub fn fit_exponential(trace: &RunTrace) -> Result<FitResult> {
    if trace.rows.len() < FIT_MIN_ROWS {
        return Err(Error::DegenerateFit(format!(
            "need at least {FIT_MIN_ROWS} rows, got {}",
            trace.rows.len()
        )));
    }
    let ts: Vec<f64> = trace.rows.iter().map(|r| r.t).collect();
    let rho: Vec<f64> = trace.rows.iter().map(|r| r.actual_keep).collect();
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let max = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::DegenerateFit("keep-ratio trace is constant".into()));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateFit(
            "trace times must increase strictly".into(),
        ));
    }

    let span = ts[ts.len() - 1] - ts[0];
    let gap = ts
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let (lo_ln, hi_ln) = ((gap / 10.0).ln(), (100.0 * span).ln());
    let step = (hi_ln - lo_ln) / (FIT_GRID_POINTS - 1) as f64;
    let score = |ln_tau: f64| fit_for_tau(&ts, &rho, ln_tau.exp()).map_or(f64::INFINITY, |f| f.2);
    let (best, best_sse) = (0..FIT_GRID_POINTS)
        .map(|k| lo_ln + k as f64 * step)
        .map(|g| (g, score(g)))
        .fold(
            (lo_ln, f64::INFINITY),
            |acc, x| {
                if x.1 < acc.1 {
                    x
                } else {
                    acc
                }
            },
        );
    if !best_sse.is_finite() {
        return Err(Error::DegenerateFit(
            "keep-ratio trace does not decay".into(),
        ));
    }

    let mut lo = best - step;
    let mut hi = best + step;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (score(x1), score(x2));
    for _ in 0..100 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = score(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = score(x2);
        }
    }
    let refined = if f1 <= f2 { x1 } else { x2 };
    let ln_tau = if score(refined) <= best_sse {
        refined
    } else {
        best
    };
    let tau = ln_tau.exp();
    let (r_inf, amplitude, sse) = fit_for_tau(&ts, &rho, tau).expect("tau was scored finite");
    let initial = r_inf + amplitude;

    let mean = rho.iter().sum::<f64>() / rho.len() as f64;
    let sst: f64 = rho.iter().map(|r| (r - mean) * (r - mean)).sum();
    Ok(FitResult {
        asymptote: r_inf,
        tau,
        initial,
        residual_norm: sse.sqrt(),
        r_squared: 1.0 - sse / sst,
    })
}

/// `shed / explicit`, with `+inf` for shedding without explicit pruning and
/// 0 when neither happened.
pub fn cascade_ratio(explicit: u64, shed: u64) -> f64 {
    match (explicit, shed) {
        (0, 0) => 0.0,
        (0, _) => f64::INFINITY,
        (e, s) => s as f64 / e as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShedAttribution {
    /// `(explicit, shed)` increments between consecutive rows.
    pub deltas: Vec<(u64, u64)>,
    pub cascade_ratio: f64,
}

pub fn shed_attribution(trace: &RunTrace) -> Result<ShedAttribution> {
    let last = trace
        .rows
        .last()
        .ok_or_else(|| Error::EmptyInput("trace has no rows".into()))?;
    let deltas = trace
        .rows
        .windows(2)
        .map(|w| {
            let explicit = w[1].explicit_cum.checked_sub(w[0].explicit_cum);
            let shed = w[1].shed_cum.checked_sub(w[0].shed_cum);
            explicit.zip(shed).ok_or_else(|| {
                Error::Validation(format!(
                    "cumulative counters decrease between steps {} and {}",
                    w[0].step, w[1].step
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShedAttribution {
        deltas,
        cascade_ratio: cascade_ratio(last.explicit_cum, last.shed_cum),
    })
}
