use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{axpy, dot, Tensor};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Flatten,
    /// Normalizes with the statistics of the current batch, both in training
    /// and in evaluation.
    BatchNorm {
        channels: usize,
    },
}

/// Layer list plus the per-sample input shape (batch axis excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Layer weights are prunable; biases and normalization parameters never.
    pub prunable: bool,
}

/// Named parameter tensors in registration order.
///
/// Every mutable access bumps a version counter so that a forward cache can
/// tell whether the parameters it was computed with are still current.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    version: u64,
}

impl ParamStore {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params, version: 0 }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        self.version += 1;
        &mut self.params[index].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn prunable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.prunable)
            .map(|p| p.value.len())
            .sum()
    }
}

impl LayerSpec {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || {
            Error::Structural(format!(
                "layer {self:?} cannot take per-sample input of shape {input:?}"
            ))
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(mismatch());
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels || stride == 0 {
                    return Err(mismatch());
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kernel_h || w < kernel_w {
                    return Err(mismatch());
                }
                Ok(vec![
                    out_channels,
                    (h - kernel_h) / stride + 1,
                    (w - kernel_w) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::BatchNorm { channels } => {
                if input.is_empty()
                    || input[0] != channels
                    || !(input.len() == 1 || input.len() == 3)
                {
                    return Err(mismatch());
                }
                Ok(input.to_vec())
            }
        }
    }
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
        };
        net.shapes()?;
        Ok(net)
    }

    /// Per-sample shapes: the input followed by every layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Structural(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            if next.iter().any(|&d| d == 0) {
                return Err(Error::Structural(format!(
                    "{layer:?} produces an empty output"
                )));
            }
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().unwrap())
    }

    /// Name, shape and prunability of every parameter, in registration order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut layout = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    layout.push((format!("layer{i}.weight"), vec![outputs, inputs], true));
                    layout.push((format!("layer{i}.bias"), vec![outputs], false));
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    layout.push((
                        format!("layer{i}.weight"),
                        vec![out_channels, in_channels, kernel_h, kernel_w],
                        true,
                    ));
                    layout.push((format!("layer{i}.bias"), vec![out_channels], false));
                }
                LayerSpec::BatchNorm { channels } => {
                    layout.push((format!("layer{i}.gamma"), vec![channels], false));
                    layout.push((format!("layer{i}.beta"), vec![channels], false));
                }
                LayerSpec::Relu | LayerSpec::Flatten => {}
            }
        }
        layout
    }

    /// He-uniform weights, zero biases, unit scales. Deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = self
            .param_layout()
            .into_iter()
            .map(|(name, shape, prunable)| {
                let n: usize = shape.iter().product();
                let data = if prunable {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                } else if name.ends_with(".gamma") {
                    vec![1.0; n]
                } else {
                    vec![0.0; n]
                };
                Param {
                    name,
                    value: Tensor::new(shape, data).expect("layout shapes are consistent"),
                    prunable,
                }
            })
            .collect();
        ParamStore::new(params)
    }

    /// Checks that `params` has exactly this network's layout.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let layout = self.param_layout();
        if layout.len() != params.len() {
            return Err(Error::Structural(format!(
                "network has {} parameters, store has {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, prunable), p) in layout.iter().zip(params.iter()) {
            if *name != p.name || shape.as_slice() != p.value.shape() || *prunable != p.prunable {
                return Err(Error::Structural(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Activations retained by [`forward`] for use by [`backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    params_version: u64,
    inputs: Vec<Tensor>,
    norms: Vec<Option<NormCache>>,
    output_shape: Vec<usize>,
}

/// Parameter index of each layer's first parameter.
fn param_offsets(net: &NetworkSpec) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(net.layers.len());
    let mut next = 0;
    for layer in &net.layers {
        offsets.push(next);
        next += match layer {
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::BatchNorm { .. } => 2,
            LayerSpec::Relu | LayerSpec::Flatten => 0,
        };
    }
    offsets
}

pub fn forward(net: &NetworkSpec, params: &ParamStore, batch: &Tensor) -> Result<(Tensor, Cache)> {
    net.check_params(params)?;
    if batch.rank() < 2 || batch.shape()[1..] != net.input_shape[..] {
        return Err(Error::Structural(format!(
            "batch shape {:?} does not match network input {:?}",
            batch.shape(),
            net.input_shape
        )));
    }
    let offsets = param_offsets(net);
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut norms = Vec::with_capacity(net.layers.len());
    let mut x = batch.clone();
    for (layer, &p) in net.layers.iter().zip(&offsets) {
        let (y, norm) = match *layer {
            LayerSpec::Dense { .. } => (
                dense_forward(&x, &params.get(p).value, &params.get(p + 1).value),
                None,
            ),
            LayerSpec::Conv2d {
                stride, padding, ..
            } => (
                conv_forward(
                    &x,
                    &params.get(p).value,
                    &params.get(p + 1).value,
                    stride,
                    padding,
                ),
                None,
            ),
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                (Tensor::new(x.shape().to_vec(), data)?, None)
            }
            LayerSpec::Flatten => {
                let b = x.shape()[0];
                let rest = x.len() / b;
                (x.clone().reshape(vec![b, rest])?, None)
            }
            LayerSpec::BatchNorm { .. } => {
                let (y, cache) = norm_forward(&x, &params.get(p).value, &params.get(p + 1).value);
                (y, Some(cache))
            }
        };
        inputs.push(x);
        norms.push(norm);
        x = y;
    }
    let cache = Cache {
        params_version: params.version(),
        inputs,
        norms,
        output_shape: x.shape().to_vec(),
    };
    Ok((x, cache))
}

/// Gradients of every parameter (masked ones included) given the gradient of
/// the loss with respect to the logits.
pub fn backward(
    net: &NetworkSpec,
    params: &ParamStore,
    cache: &Cache,
    loss_grad: &Tensor,
) -> Result<Vec<Tensor>> {
    if cache.params_version != params.version() || cache.inputs.len() != net.layers.len() {
        return Err(Error::Structural(
            "stale cache: parameters changed since the forward pass".into(),
        ));
    }
    if loss_grad.shape() != cache.output_shape.as_slice() {
        return Err(Error::Structural(format!(
            "loss gradient shape {:?} does not match logits {:?}",
            loss_grad.shape(),
            cache.output_shape
        )));
    }
    let offsets = param_offsets(net);
    let mut grads: Vec<Tensor> = params
        .iter()
        .map(|p| Tensor::zeros(p.value.shape()))
        .collect();
    let mut dy = loss_grad.clone();
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let x = &cache.inputs[i];
        let p = offsets[i];
        dy = match *layer {
            LayerSpec::Dense { .. } => {
                let (dx, dw, db) = dense_backward(x, &params.get(p).value, &dy);
                grads[p] = dw;
                grads[p + 1] = db;
                dx
            }
            LayerSpec::Conv2d {
                stride, padding, ..
            } => {
                let (dx, dw, db) = conv_backward(x, &params.get(p).value, &dy, stride, padding);
                grads[p] = dw;
                grads[p + 1] = db;
                dx
            }
            LayerSpec::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            LayerSpec::Flatten => dy.reshape(x.shape().to_vec())?,
            LayerSpec::BatchNorm { .. } => {
                let norm = cache.norms[i]
                    .as_ref()
                    .expect("norm layer caches statistics");
                let (dx, dgamma, dbeta) = norm_backward(x, &params.get(p).value, norm, &dy);
                grads[p] = dgamma;
                grads[p + 1] = dbeta;
                dx
            }
        };
    }
    Ok(grads)
}

fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (batch, inputs) = (x.shape()[0], x.shape()[1]);
    let outputs = w.shape()[0];
    let mut y = vec![0.0; batch * outputs];
    for (xr, yr) in x
        .data()
        .chunks_exact(inputs)
        .zip(y.chunks_exact_mut(outputs))
    {
        for ((yo, wr), bo) in yr
            .iter_mut()
            .zip(w.data().chunks_exact(inputs))
            .zip(b.data())
        {
            *yo = dot(xr, wr) + bo;
        }
    }
    Tensor {
        shape: vec![batch, outputs],
        data: y,
    }
}

fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, inputs) = (x.shape()[0], x.shape()[1]);
    let outputs = w.shape()[0];
    let mut dx = vec![0.0; batch * inputs];
    let mut dw = vec![0.0; outputs * inputs];
    let mut db = vec![0.0; outputs];
    for ((xr, dyr), dxr) in x
        .data()
        .chunks_exact(inputs)
        .zip(dy.data().chunks_exact(outputs))
        .zip(dx.chunks_exact_mut(inputs))
    {
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, &w.data()[o * inputs..(o + 1) * inputs], dxr);
            axpy(g, xr, &mut dw[o * inputs..(o + 1) * inputs]);
            db[o] += g;
        }
    }
    (
        Tensor {
            shape: x.shape().to_vec(),
            data: dx,
        },
        Tensor {
            shape: w.shape().to_vec(),
            data: dw,
        },
        Tensor {
            shape: vec![outputs],
            data: db,
        },
    )
}

struct ConvGeometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Self {
        let s = x.shape();
        let ws = w.shape();
        let (kh, kw) = (ws[2], ws[3]);
        Self {
            batch: s[0],
            in_c: s[1],
            in_h: s[2],
            in_w: s[3],
            out_c: ws[0],
            out_h: (s[2] + 2 * padding - kh) / stride + 1,
            out_w: (s[3] + 2 * padding - kw) / stride + 1,
            kh,
            kw,
            stride,
            padding,
        }
    }

    /// Input coordinate read by output `(oy, ox)` at kernel tap `(ky, kx)`,
    /// or `None` when it falls into the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.in_h && ix < self.in_w).then_some((iy, ix))
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Tensor {
    let g = ConvGeometry::new(x, w, stride, padding);
    let mut y = vec![0.0; g.batch * g.out_c * g.out_h * g.out_w];
    let xd = x.data();
    let wd = w.data();
    for n in 0..g.batch {
        for o in 0..g.out_c {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b.data()[o];
                    for c in 0..g.in_c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                    acc += wd[((o * g.in_c + c) * g.kh + ky) * g.kw + kx]
                                        * xd[((n * g.in_c + c) * g.in_h + iy) * g.in_w + ix];
                                }
                            }
                        }
                    }
                    y[((n * g.out_c + o) * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
    }
    Tensor {
        shape: vec![g.batch, g.out_c, g.out_h, g.out_w],
        data: y,
    }
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let g = ConvGeometry::new(x, w, stride, padding);
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wd.len()];
    let mut db = vec![0.0; g.out_c];
    for n in 0..g.batch {
        for o in 0..g.out_c {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let grad = dyd[((n * g.out_c + o) * g.out_h + oy) * g.out_w + ox];
                    db[o] += grad;
                    for c in 0..g.in_c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                    let wi = ((o * g.in_c + c) * g.kh + ky) * g.kw + kx;
                                    let xi = ((n * g.in_c + c) * g.in_h + iy) * g.in_w + ix;
                                    dw[wi] += grad * xd[xi];
                                    dx[xi] += grad * wd[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor {
            shape: x.shape().to_vec(),
            data: dx,
        },
        Tensor {
            shape: w.shape().to_vec(),
            data: dw,
        },
        Tensor {
            shape: vec![g.out_c],
            data: db,
        },
    )
}

/// (batch, channels, spatial) view of a rank-2 or rank-4 activation.
fn norm_dims(x: &Tensor) -> (usize, usize, usize) {
    let s = x.shape();
    let spatial = s[2..].iter().product();
    (s[0], s[1], spatial)
}

fn norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, NormCache) {
    let (batch, channels, spatial) = norm_dims(x);
    let count = (batch * spatial) as f64;
    let xd = x.data();
    let at = |n: usize, c: usize, s: usize| (n * channels + c) * spatial + s;
    let mut normalized = vec![0.0; xd.len()];
    let mut inv_std = vec![0.0; channels];
    let mut y = vec![0.0; xd.len()];
    for c in 0..channels {
        let mut mean = 0.0;
        for n in 0..batch {
            for s in 0..spatial {
                mean += xd[at(n, c, s)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for n in 0..batch {
            for s in 0..spatial {
                let d = xd[at(n, c, s)] - mean;
                var += d * d;
            }
        }
        var /= count;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = istd;
        for n in 0..batch {
            for s in 0..spatial {
                let i = at(n, c, s);
                normalized[i] = (xd[i] - mean) * istd;
                y[i] = gamma.data()[c] * normalized[i] + beta.data()[c];
            }
        }
    }
    (
        Tensor {
            shape: x.shape().to_vec(),
            data: y,
        },
        NormCache {
            normalized,
            inv_std,
        },
    )
}

fn norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    cache: &NormCache,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, channels, spatial) = norm_dims(x);
    let count = (batch * spatial) as f64;
    let at = |n: usize, c: usize, s: usize| (n * channels + c) * spatial + s;
    let dyd = dy.data();
    let xhat = &cache.normalized;
    let mut dx = vec![0.0; dyd.len()];
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for c in 0..channels {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for n in 0..batch {
            for s in 0..spatial {
                let i = at(n, c, s);
                sum_dy += dyd[i];
                sum_dy_xhat += dyd[i] * xhat[i];
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let scale = gamma.data()[c] * cache.inv_std[c] / count;
        for n in 0..batch {
            for s in 0..spatial {
                let i = at(n, c, s);
                dx[i] = scale * (count * dyd[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
    (
        Tensor {
            shape: x.shape().to_vec(),
            data: dx,
        },
        Tensor {
            shape: vec![channels],
            data: dgamma,
        },
        Tensor {
            shape: vec![channels],
            data: dbeta,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_net(inputs: usize, outputs: usize) -> NetworkSpec {
        NetworkSpec::new(vec![inputs], vec![LayerSpec::Dense { inputs, outputs }]).unwrap()
    }

    #[test]
    fn identity_dense_is_identity() {
        let net = dense_net(3, 3);
        let mut params = net.init_params(0);
        let w = params.tensor_mut(0);
        w.data_mut().fill(0.0);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let (y, _) = forward(&net, &params, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let net = NetworkSpec::new(
            vec![4],
            vec![
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 5,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 5,
                    outputs: 2,
                },
            ],
        )
        .unwrap();
        let mut params = net.init_params(1);
        for i in 0..params.len() {
            params.tensor_mut(i).data_mut().fill(0.0);
        }
        let x = Tensor::new(vec![3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let (y, _) = forward(&net, &params, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let net = dense_net(3, 2);
        let params = net.init_params(0);
        let x = Tensor::zeros(&[2, 4]);
        assert!(matches!(
            forward(&net, &params, &x),
            Err(Error::Structural(_))
        ));
        assert!(NetworkSpec::new(
            vec![3],
            vec![LayerSpec::Dense {
                inputs: 4,
                outputs: 2
            }]
        )
        .is_err());
    }

    #[test]
    fn stale_cache_rejected() {
        let net = dense_net(3, 2);
        let mut params = net.init_params(0);
        let x = Tensor::zeros(&[1, 3]);
        let (y, cache) = forward(&net, &params, &x).unwrap();
        params.tensor_mut(1);
        let g = Tensor::zeros(y.shape());
        assert!(matches!(
            backward(&net, &params, &cache, &g),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn zero_loss_grad_gives_zero_grads() {
        let net = NetworkSpec::new(
            vec![2, 5, 5],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 75,
                    outputs: 4,
                },
            ],
        )
        .unwrap();
        let params = net.init_params(3);
        let x = Tensor::new(
            vec![2, 2, 5, 5],
            (0..100).map(|v| (v as f64).sin()).collect(),
        )
        .unwrap();
        let (y, cache) = forward(&net, &params, &x).unwrap();
        let grads = backward(&net, &params, &cache, &Tensor::zeros(y.shape())).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn conv_output_geometry() {
        let net = NetworkSpec::new(
            vec![1, 7, 6],
            vec![LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel_h: 3,
                kernel_w: 2,
                stride: 2,
                padding: 1,
            }],
        )
        .unwrap();
        assert_eq!(net.output_shape().unwrap(), vec![2, 4, 4]);
    }

    #[test]
    fn layout_marks_only_weights_prunable() {
        let net = NetworkSpec::new(
            vec![4],
            vec![
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 4,
                },
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 2,
                },
            ],
        )
        .unwrap();
        let flags: Vec<(String, bool)> = net
            .param_layout()
            .into_iter()
            .map(|(n, _, p)| (n, p))
            .collect();
        assert_eq!(
            flags,
            vec![
                ("layer0.weight".to_string(), true),
                ("layer0.bias".to_string(), false),
                ("layer1.gamma".to_string(), false),
                ("layer1.beta".to_string(), false),
                ("layer3.weight".to_string(), true),
                ("layer3.bias".to_string(), false),
            ]
        );
        let params = net.init_params(0);
        assert_eq!(params.prunable_count(), 24);
    }
}
