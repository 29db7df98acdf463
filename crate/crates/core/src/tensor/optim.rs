use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::pruning::MaskState;

/// Heavy-ball SGD state. Weight decay is folded into the gradient:
///
/// ```text
/// v <- momentum * v + g + decay * w
/// w <- w - lr * v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    velocities: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::range("momentum", momentum, "[0, 1)"));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::range("weight_decay", weight_decay, ">= 0"));
        }
        Ok(Self {
            momentum,
            weight_decay,
            velocities: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        })
    }

    pub fn velocity(&self, param: usize) -> &Tensor {
        &self.velocities[param]
    }

    pub fn velocity_mut(&mut self, param: usize) -> &mut Tensor {
        &mut self.velocities[param]
    }
}

/// Per-weight decay coefficients replacing the optimizer's uniform decay for
/// selected parameters. Indexed by parameter position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecayOverrides {
    per_param: Vec<Option<Vec<f64>>>,
}

impl DecayOverrides {
    pub fn new(param_count: usize) -> Self {
        Self {
            per_param: vec![None; param_count],
        }
    }

    pub fn set(&mut self, param: usize, decays: Vec<f64>) {
        self.per_param[param] = Some(decays);
    }

    pub fn get(&self, param: usize) -> Option<&[f64]> {
        self.per_param.get(param).and_then(|d| d.as_deref())
    }
}

/// One optimizer update. Masked weights and their velocities are forced to
/// exactly zero; everything else follows the heavy-ball rule.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    opt: &mut OptimizerState,
    mask: &MaskState,
    lr: f64,
    decay: Option<&DecayOverrides>,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::range("lr", lr, "finite and >= 0"));
    }
    if grads.len() != params.len() || opt.velocities.len() != params.len() {
        return Err(Error::Structural(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            opt.velocities.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.value.shape() != g.shape() || opt.velocities[i].shape() != g.shape() {
            return Err(Error::Structural(format!(
                "gradient or velocity for `{}` has the wrong shape",
                p.name
            )));
        }
        if let Some(d) = decay.and_then(|d| d.get(i)) {
            if d.len() != g.len() {
                return Err(Error::Structural(format!(
                    "decay override for `{}` has the wrong length",
                    p.name
                )));
            }
        }
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            tensor: params.get(i).name.clone(),
        });
    }

    let momentum = opt.momentum;
    for (i, g) in grads.iter().enumerate() {
        let kept = mask.kept_for_param(i);
        let overrides = decay.and_then(|d| d.get(i));
        let uniform = opt.weight_decay;
        let v = opt.velocities[i].data_mut();
        let w = params.tensor_mut(i).data_mut();
        for j in 0..w.len() {
            if kept.is_some_and(|k| !k[j]) {
                w[j] = 0.0;
                v[j] = 0.0;
                continue;
            }
            let d = overrides.map_or(uniform, |o| o[j]);
            v[j] = momentum * v[j] + g.data()[j] + d * w[j];
            w[j] -= lr * v[j];
        }
    }
    Ok(())
}
