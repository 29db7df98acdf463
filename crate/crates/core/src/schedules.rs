//! Learning-rate and target keep-ratio schedules.
//!
//! Everything here is a pure function of the normalized training time
//! `t = batch_index / batches_per_epoch`, measured in epochs. The harness
//! decides when to sample; these functions only do the math.

use crate::error::{Error, Result};

/// Position of a run in normalized time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunClock {
    pub batches_per_epoch: u64,
    pub total_epochs: u64,
    pub batch_index: u64,
}

impl RunClock {
    pub fn new(batches_per_epoch: u64, total_epochs: u64) -> Result<Self> {
        if batches_per_epoch == 0 {
            return Err(Error::range("batches_per_epoch", 0.0, "> 0"));
        }
        Ok(Self {
            batches_per_epoch,
            total_epochs,
            batch_index: 0,
        })
    }

    pub fn at(self, batch_index: u64) -> Self {
        Self {
            batch_index,
            ..self
        }
    }

    pub fn total_batches(&self) -> u64 {
        self.batches_per_epoch * self.total_epochs
    }

    /// Normalized time in epochs.
    pub fn t(&self) -> f64 {
        self.batch_index as f64 / self.batches_per_epoch as f64
    }

    /// Zero-based epoch index, i.e. `floor(t)`.
    pub fn epoch(&self) -> u64 {
        self.batch_index / self.batches_per_epoch
    }

    pub fn in_bounds(&self) -> bool {
        self.batch_index < self.total_batches()
    }
}

/// One piece of a piecewise-constant learning-rate schedule: `rate` applies
/// while the (possibly cycle-reduced) epoch index is below `until_epoch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrStep {
    pub until_epoch: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LrScheduleSpec {
    /// Rate picked by `floor(t)`; past the last boundary the last rate holds.
    ThreeStep { steps: Vec<LrStep> },
    /// Rate picked by `floor(t) mod cycle_length`.
    Cyclic {
        cycle_length: u64,
        steps: Vec<LrStep>,
    },
}

const THREE_STEP_DEFAULT: [(u64, f64); 3] = [(11, 1e-2), (23, 1e-3), (35, 1e-4)];
const CYCLIC_DEFAULT: [(u64, f64); 3] = [(3, 1e-2), (5, 1e-3), (7, 1e-4)];

fn steps_from(pairs: &[(u64, f64)]) -> Vec<LrStep> {
    pairs
        .iter()
        .map(|&(until_epoch, rate)| LrStep { until_epoch, rate })
        .collect()
}

impl LrScheduleSpec {
    /// 1e-2 / 1e-3 / 1e-4 switching at epochs 11 and 23, ending at 35.
    pub fn three_step() -> Self {
        LrScheduleSpec::ThreeStep {
            steps: steps_from(&THREE_STEP_DEFAULT),
        }
    }

    /// The three-step shape with its boundaries rescaled from a 35-epoch run
    /// to `total_epochs`. Every phase keeps at least one epoch.
    pub fn three_step_scaled(total_epochs: u64) -> Result<Self> {
        if total_epochs < 3 {
            return Err(Error::range(
                "total_epochs",
                total_epochs as f64,
                ">= 3 for a scaled three-step schedule",
            ));
        }
        let scale = |b: u64| ((b * total_epochs) as f64 / 35.0).round() as u64;
        let first = scale(11).clamp(1, total_epochs - 2);
        let second = scale(23).clamp(first + 1, total_epochs - 1);
        Ok(LrScheduleSpec::ThreeStep {
            steps: steps_from(&[(first, 1e-2), (second, 1e-3), (total_epochs, 1e-4)]),
        })
    }

    /// Seven-epoch cycle: three epochs at 1e-2, two at 1e-3, two at 1e-4.
    pub fn cyclic() -> Self {
        LrScheduleSpec::Cyclic {
            cycle_length: 7,
            steps: steps_from(&CYCLIC_DEFAULT),
        }
    }

    pub fn steps(&self) -> &[LrStep] {
        match self {
            LrScheduleSpec::ThreeStep { steps } | LrScheduleSpec::Cyclic { steps, .. } => steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let steps = self.steps();
        if steps.is_empty() {
            return Err(Error::Validation(
                "learning-rate schedule has no steps".into(),
            ));
        }
        let mut previous = 0;
        for step in steps {
            if !(step.rate > 0.0 && step.rate.is_finite()) {
                return Err(Error::range("learning rate", step.rate, "finite and > 0"));
            }
            if step.until_epoch <= previous {
                return Err(Error::Validation(
                    "learning-rate boundaries must be strictly increasing and positive".into(),
                ));
            }
            previous = step.until_epoch;
        }
        if let LrScheduleSpec::Cyclic { cycle_length, .. } = self {
            if *cycle_length == 0 || previous != *cycle_length {
                return Err(Error::Validation(format!(
                    "cyclic learning-rate boundaries must end at the cycle length {cycle_length}"
                )));
            }
        }
        Ok(())
    }
}

fn pick_rate(steps: &[LrStep], epoch: u64) -> f64 {
    steps
        .iter()
        .find(|s| epoch < s.until_epoch)
        .or(steps.last())
        .map(|s| s.rate)
        .expect("validated schedule has at least one step")
}

/// Learning rate for the batch the clock points at.
pub fn lr_value(spec: &LrScheduleSpec, clock: &RunClock) -> Result<f64> {
    if !clock.in_bounds() {
        return Err(Error::range(
            "t",
            clock.t(),
            format!("[0, {})", clock.total_epochs),
        ));
    }
    spec.validate()?;
    let rate = match spec {
        LrScheduleSpec::ThreeStep { steps } => pick_rate(steps, clock.epoch()),
        LrScheduleSpec::Cyclic {
            cycle_length,
            steps,
        } => pick_rate(steps, clock.epoch() % cycle_length),
    };
    Ok(rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeepRatioKind {
    Linear,
    Exponential {
        tau: f64,
    },
    /// Exponential decay that only advances during the first `gate_epochs`
    /// epochs of each cycle and holds while the gate is closed.
    CycleGatedExponential {
        tau: f64,
        cycle_length: u64,
        gate_epochs: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeepRatioScheduleSpec {
    pub kind: KeepRatioKind,
    pub final_keep: f64,
    pub total_time: f64,
}

impl KeepRatioScheduleSpec {
    pub fn linear(final_keep: f64, total_time: f64) -> Result<Self> {
        Self::new(KeepRatioKind::Linear, final_keep, total_time)
    }

    pub fn exponential(final_keep: f64, tau: f64, total_time: f64) -> Result<Self> {
        Self::new(KeepRatioKind::Exponential { tau }, final_keep, total_time)
    }

    pub fn cycle_gated(
        final_keep: f64,
        tau: f64,
        cycle_length: u64,
        gate_epochs: u64,
        total_time: f64,
    ) -> Result<Self> {
        Self::new(
            KeepRatioKind::CycleGatedExponential {
                tau,
                cycle_length,
                gate_epochs,
            },
            final_keep,
            total_time,
        )
    }

    pub fn new(kind: KeepRatioKind, final_keep: f64, total_time: f64) -> Result<Self> {
        let spec = Self {
            kind,
            final_keep,
            total_time,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.final_keep > 0.0 && self.final_keep <= 1.0) {
            return Err(Error::range("final_keep", self.final_keep, "(0, 1]"));
        }
        if !(self.total_time >= 0.0 && self.total_time.is_finite()) {
            return Err(Error::range("total_time", self.total_time, ">= 0"));
        }
        match self.kind {
            KeepRatioKind::Linear => {}
            KeepRatioKind::Exponential { tau } => check_tau(tau)?,
            KeepRatioKind::CycleGatedExponential {
                tau,
                cycle_length,
                gate_epochs,
            } => {
                check_tau(tau)?;
                if cycle_length == 0 {
                    return Err(Error::range("cycle_length", 0.0, "> 0"));
                }
                if gate_epochs == 0 || gate_epochs > cycle_length {
                    return Err(Error::range(
                        "gate_epochs",
                        gate_epochs as f64,
                        format!("[1, {cycle_length}]"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.total_time).contains(&t) {
            return Err(Error::range("t", t, format!("[0, {}]", self.total_time)));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::range("tau", tau, "finite and > 0"));
    }
    Ok(())
}

/// Time spent with the gate open up to `t`.
fn gated_time(t: f64, cycle_length: u64, gate_epochs: u64) -> f64 {
    let cycle = cycle_length as f64;
    let gate = gate_epochs as f64;
    let full_cycles = (t / cycle).floor();
    let into_cycle = t - full_cycles * cycle;
    full_cycles * gate + into_cycle.min(gate)
}

/// Target keep-ratio `r_t`.
pub fn keep_ratio_value(spec: &KeepRatioScheduleSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    spec.check_time(t)?;
    let rf = spec.final_keep;
    let value = match spec.kind {
        KeepRatioKind::Linear => {
            if spec.total_time == 0.0 {
                1.0
            } else if t == spec.total_time {
                rf
            } else {
                1.0 - (1.0 - rf) * t / spec.total_time
            }
        }
        KeepRatioKind::Exponential { tau } => rf + (1.0 - rf) * (-t / tau).exp(),
        KeepRatioKind::CycleGatedExponential {
            tau,
            cycle_length,
            gate_epochs,
        } => {
            let effective = gated_time(t, cycle_length, gate_epochs);
            rf + (1.0 - rf) * (-effective / tau).exp()
        }
    };
    Ok(value)
}

/// `(d/dt)(r_t - R_f) / (r_t - R_f)`, evaluated analytically.
///
/// For the cycle-gated variant the right derivative is returned: `-1/tau`
/// while the gate is open and `0` while it is closed.
pub fn normalized_pruning_rate(spec: &KeepRatioScheduleSpec, t: f64) -> Result<f64> {
    let excess = keep_ratio_value(spec, t)? - spec.final_keep;
    if excess <= 0.0 {
        return Err(Error::DegenerateSchedule { t });
    }
    let rate = match spec.kind {
        KeepRatioKind::Linear => -1.0 / (spec.total_time - t),
        KeepRatioKind::Exponential { tau } => -1.0 / tau,
        KeepRatioKind::CycleGatedExponential {
            tau,
            cycle_length,
            gate_epochs,
        } => {
            let into_cycle = t - (t / cycle_length as f64).floor() * cycle_length as f64;
            if into_cycle < gate_epochs as f64 {
                -1.0 / tau
            } else {
                0.0
            }
        }
    };
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock(t_batches: u64, bpe: u64, epochs: u64) -> RunClock {
        RunClock::new(bpe, epochs).unwrap().at(t_batches)
    }

    #[test]
    fn three_step_examples() {
        let spec = LrScheduleSpec::three_step();
        assert_eq!(lr_value(&spec, &clock(0, 10, 35)).unwrap(), 1e-2);
        assert_eq!(lr_value(&spec, &clock(110, 10, 35)).unwrap(), 1e-3);
        assert_eq!(lr_value(&spec, &clock(109, 10, 35)).unwrap(), 1e-2);
        assert_eq!(lr_value(&spec, &clock(230, 10, 35)).unwrap(), 1e-4);
        assert_eq!(lr_value(&spec, &clock(349, 10, 35)).unwrap(), 1e-4);
    }

    #[test]
    fn cyclic_examples() {
        let spec = LrScheduleSpec::cyclic();
        // floor(t) = 6 and 13 both land in the last bucket
        assert_eq!(lr_value(&spec, &clock(6, 1, 35)).unwrap(), 1e-4);
        assert_eq!(lr_value(&spec, &clock(13, 1, 35)).unwrap(), 1e-4);
        assert_eq!(lr_value(&spec, &clock(7, 1, 35)).unwrap(), 1e-2);
        assert_eq!(lr_value(&spec, &clock(10, 1, 35)).unwrap(), 1e-3);
    }

    #[test]
    fn lr_out_of_bounds() {
        let spec = LrScheduleSpec::three_step();
        assert!(matches!(
            lr_value(&spec, &clock(350, 10, 35)),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn cyclic_is_periodic() {
        let spec = LrScheduleSpec::cyclic();
        for b in 0..(28 * 4) {
            let a = lr_value(&spec, &clock(b, 4, 35)).unwrap();
            let shifted = lr_value(&spec, &clock(b + 28, 4, 35)).unwrap();
            assert_eq!(a, shifted);
        }
    }

    #[test]
    fn scaled_three_step_keeps_shape() {
        let spec = LrScheduleSpec::three_step_scaled(6).unwrap();
        let bounds: Vec<u64> = spec.steps().iter().map(|s| s.until_epoch).collect();
        assert_eq!(bounds, vec![2, 4, 6]);
        let spec = LrScheduleSpec::three_step_scaled(35).unwrap();
        assert_eq!(spec, LrScheduleSpec::three_step());
        let spec = LrScheduleSpec::three_step_scaled(3).unwrap();
        spec.validate().unwrap();
    }

    #[test]
    fn invalid_lr_schedules_rejected() {
        let bad = LrScheduleSpec::ThreeStep {
            steps: vec![
                LrStep {
                    until_epoch: 5,
                    rate: 0.1,
                },
                LrStep {
                    until_epoch: 5,
                    rate: 0.01,
                },
            ],
        };
        assert!(bad.validate().is_err());
        let bad = LrScheduleSpec::ThreeStep {
            steps: vec![LrStep {
                until_epoch: 5,
                rate: 0.0,
            }],
        };
        assert!(bad.validate().is_err());
        let bad = LrScheduleSpec::Cyclic {
            cycle_length: 6,
            steps: steps_from(&CYCLIC_DEFAULT),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn keep_ratio_examples() {
        let lin = KeepRatioScheduleSpec::linear(0.15, 10.0).unwrap();
        assert_eq!(keep_ratio_value(&lin, 0.0).unwrap(), 1.0);
        assert!((keep_ratio_value(&lin, 5.0).unwrap() - 0.575).abs() < 1e-15);
        assert_eq!(keep_ratio_value(&lin, 10.0).unwrap(), 0.15);

        let exp = KeepRatioScheduleSpec::exponential(0.15, 3.0, 35.0).unwrap();
        let v = keep_ratio_value(&exp, 3.0).unwrap();
        assert!((v - 0.462_697_524_995_726).abs() < 1e-12, "{v}");
        assert_eq!(keep_ratio_value(&exp, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn keep_ratio_out_of_range() {
        let lin = KeepRatioScheduleSpec::linear(0.15, 10.0).unwrap();
        assert!(keep_ratio_value(&lin, -0.1).is_err());
        assert!(keep_ratio_value(&lin, 10.5).is_err());
        assert!(KeepRatioScheduleSpec::linear(0.0, 10.0).is_err());
        assert!(KeepRatioScheduleSpec::linear(1.5, 10.0).is_err());
        assert!(KeepRatioScheduleSpec::exponential(0.5, 0.0, 10.0).is_err());
    }

    #[test]
    fn gated_holds_while_closed() {
        let spec = KeepRatioScheduleSpec::cycle_gated(0.15, 3.0, 7, 2, 35.0).unwrap();
        let at2 = keep_ratio_value(&spec, 2.0).unwrap();
        let at5 = keep_ratio_value(&spec, 5.5).unwrap();
        let at7 = keep_ratio_value(&spec, 7.0).unwrap();
        assert_eq!(at2, at5);
        assert_eq!(at2, at7);
        let at8 = keep_ratio_value(&spec, 8.0).unwrap();
        let exp = KeepRatioScheduleSpec::exponential(0.15, 3.0, 35.0).unwrap();
        assert!((at8 - keep_ratio_value(&exp, 3.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn gated_with_full_gate_is_plain_exponential() {
        let gated = KeepRatioScheduleSpec::cycle_gated(0.2, 2.5, 7, 7, 35.0).unwrap();
        let plain = KeepRatioScheduleSpec::exponential(0.2, 2.5, 35.0).unwrap();
        for i in 0..=3500 {
            let t = i as f64 / 100.0;
            let a = keep_ratio_value(&gated, t).unwrap();
            let b = keep_ratio_value(&plain, t).unwrap();
            assert!((a - b).abs() <= 1e-15 * b.abs(), "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn normalized_rate_examples() {
        let lin = KeepRatioScheduleSpec::linear(0.15, 35.0).unwrap();
        assert_eq!(normalized_pruning_rate(&lin, 34.0).unwrap(), -1.0);
        assert!(matches!(
            normalized_pruning_rate(&lin, 35.0),
            Err(Error::DegenerateSchedule { .. })
        ));
        let exp = KeepRatioScheduleSpec::exponential(0.15, 3.0, 35.0).unwrap();
        for t in [0.0, 1.0, 17.3, 35.0] {
            assert_eq!(normalized_pruning_rate(&exp, t).unwrap(), -1.0 / 3.0);
        }
        let flat = KeepRatioScheduleSpec::exponential(1.0, 3.0, 35.0).unwrap();
        assert!(normalized_pruning_rate(&flat, 1.0).is_err());
    }

    #[test]
    fn gated_rate_zero_when_closed() {
        let spec = KeepRatioScheduleSpec::cycle_gated(0.15, 3.0, 7, 2, 35.0).unwrap();
        assert_eq!(normalized_pruning_rate(&spec, 1.5).unwrap(), -1.0 / 3.0);
        assert_eq!(normalized_pruning_rate(&spec, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn schedules_non_increasing_on_dense_grid() {
        let specs = [
            KeepRatioScheduleSpec::linear(0.15, 35.0).unwrap(),
            KeepRatioScheduleSpec::exponential(0.15, 3.0, 35.0).unwrap(),
            KeepRatioScheduleSpec::cycle_gated(0.15, 3.0, 7, 2, 35.0).unwrap(),
        ];
        for spec in &specs {
            let mut previous = f64::INFINITY;
            for i in 0..=35_000 {
                let t = i as f64 / 1000.0;
                let v = keep_ratio_value(spec, t).unwrap();
                assert!(v <= previous, "{spec:?} increases at t={t}");
                assert!((spec.final_keep..=1.0).contains(&v));
                previous = v;
            }
        }
    }
}
