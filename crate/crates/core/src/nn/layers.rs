//! Layer definitions and their forward/backward rules.

use super::conv::{conv_backward, conv_forward, dense_backward, dense_forward, ConvGeom};
use super::{Gradients, NnError, ParameterSet, Tensor};

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One entry of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: usize,
    },
    BatchNorm2d {
        name: String,
        channels: usize,
    },
    Dense {
        name: String,
        in_features: usize,
        out_features: usize,
    },
    Elu,
    Relu,
    Sigmoid,
    AvgPool2,
    MaxPool2,
    Flatten,
}

/// What a layer remembers from a recorded forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Conv { input: Tensor },
    Dense { input: Tensor },
    BatchNormTrain {
        xhat: Tensor,
        inv_std: Vec<f32>,
        mean: Vec<f32>,
        var_unbiased: Vec<f32>,
    },
    BatchNormEval { xhat: Tensor, inv_std: Vec<f32> },
    Activation { output: Tensor },
    AvgPool { in_shape: Vec<usize> },
    MaxPool { in_shape: Vec<usize>, argmax: Vec<u32> },
    Flatten { in_shape: Vec<usize> },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv2d { name, .. } | Layer::BatchNorm2d { name, .. } | Layer::Dense { name, .. } => name,
            Layer::Elu => "elu",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::AvgPool2 => "avgpool",
            Layer::MaxPool2 => "maxpool",
            Layer::Flatten => "flatten",
        }
    }

    /// Parameter names this layer owns, with their shapes and trainability.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, bool)> {
        match self {
            Layer::Conv2d { name, in_ch, out_ch, kernel, .. } => vec![
                (format!("{name}.weight"), vec![*out_ch, *in_ch, *kernel, *kernel], true),
                (format!("{name}.bias"), vec![*out_ch], true),
            ],
            Layer::BatchNorm2d { name, channels } => vec![
                (format!("{name}.gamma"), vec![*channels], true),
                (format!("{name}.beta"), vec![*channels], true),
                (format!("{name}.running_mean"), vec![*channels], false),
                (format!("{name}.running_var"), vec![*channels], false),
            ],
            Layer::Dense { name, in_features, out_features } => vec![
                (format!("{name}.weight"), vec![*out_features, *in_features], true),
                (format!("{name}.bias"), vec![*out_features], true),
            ],
            _ => vec![],
        }
    }

    /// Output shape (without batch dimension) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = |expected: Vec<usize>| NnError::ShapeMismatch {
            layer: self.name().to_string(),
            expected,
            actual: input.to_vec(),
        };
        match self {
            Layer::Conv2d { in_ch, out_ch, kernel, padding, .. } => {
                if input.len() != 3 || input[0] != *in_ch || input[1] + 2 * padding < *kernel || input[2] + 2 * padding < *kernel {
                    return Err(mismatch(vec![*in_ch, 0, 0]));
                }
                Ok(vec![*out_ch, input[1] + 2 * padding + 1 - kernel, input[2] + 2 * padding + 1 - kernel])
            }
            Layer::BatchNorm2d { channels, .. } => {
                if input.len() != 3 || input[0] != *channels {
                    return Err(mismatch(vec![*channels, 0, 0]));
                }
                Ok(input.to_vec())
            }
            Layer::Dense { in_features, out_features, .. } => {
                if input != [*in_features] {
                    return Err(mismatch(vec![*in_features]));
                }
                Ok(vec![*out_features])
            }
            Layer::Elu | Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::AvgPool2 | Layer::MaxPool2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(mismatch(vec![0, 2, 2]));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub(crate) fn forward(
        &self,
        params: &ParameterSet,
        x: Tensor,
        mode: Mode,
        record: bool,
    ) -> Result<(Tensor, Option<Cache>), NnError> {
        let batch = x.batch();
        let out_shape = self.output_shape(&x.shape()[1..])?;
        let full_shape = |s: &[usize]| -> Vec<usize> { std::iter::once(batch).chain(s.iter().copied()).collect() };
        match self {
            Layer::Conv2d { name, in_ch, out_ch, kernel, padding } => {
                let g = ConvGeom {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    padding: *padding,
                    height: x.shape()[2],
                    width: x.shape()[3],
                };
                let w = params.tensor(&format!("{name}.weight"))?;
                let b = params.tensor(&format!("{name}.bias"))?;
                let y = conv_forward(&g, batch, x.data(), w.data(), b.data());
                let y = Tensor::new(full_shape(&out_shape), y)?;
                Ok((y, record.then(|| Cache::Conv { input: x })))
            }
            Layer::Dense { name, in_features, out_features } => {
                let w = params.tensor(&format!("{name}.weight"))?;
                let b = params.tensor(&format!("{name}.bias"))?;
                let y = dense_forward(batch, *in_features, *out_features, x.data(), w.data(), b.data());
                let y = Tensor::new(full_shape(&out_shape), y)?;
                Ok((y, record.then(|| Cache::Dense { input: x })))
            }
            Layer::BatchNorm2d { name, channels } => batch_norm_forward(params, name, *channels, x, mode, record),
            Layer::Elu => {
                let y = x.map(|v| if v > 0.0 { v } else { v.exp_m1() });
                let cache = record.then(|| Cache::Activation { output: y.clone() });
                Ok((y, cache))
            }
            Layer::Relu => {
                let y = x.map(|v| v.max(0.0));
                let cache = record.then(|| Cache::Activation { output: y.clone() });
                Ok((y, cache))
            }
            Layer::Sigmoid => {
                let y = x.map(sigmoid);
                let cache = record.then(|| Cache::Activation { output: y.clone() });
                Ok((y, cache))
            }
            Layer::AvgPool2 | Layer::MaxPool2 => {
                let is_max = matches!(self, Layer::MaxPool2);
                let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (oh, ow) = (h / 2, w / 2);
                let mut y = vec![0.0f32; batch * c * oh * ow];
                let mut argmax = if is_max && record { vec![0u32; y.len()] } else { Vec::new() };
                let xd = x.data();
                for plane in 0..batch * c {
                    let src = &xd[plane * h * w..(plane + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let idx = [
                                2 * oy * w + 2 * ox,
                                2 * oy * w + 2 * ox + 1,
                                (2 * oy + 1) * w + 2 * ox,
                                (2 * oy + 1) * w + 2 * ox + 1,
                            ];
                            let o = plane * oh * ow + oy * ow + ox;
                            if is_max {
                                let mut best = idx[0];
                                for &i in &idx[1..] {
                                    if src[i] > src[best] {
                                        best = i;
                                    }
                                }
                                y[o] = src[best];
                                if record {
                                    argmax[o] = best as u32;
                                }
                            } else {
                                y[o] = idx.iter().map(|&i| src[i]).sum::<f32>() * 0.25;
                            }
                        }
                    }
                }
                let y = Tensor::new(full_shape(&out_shape), y)?;
                let in_shape = x.shape().to_vec();
                let cache = record.then(|| {
                    if is_max {
                        Cache::MaxPool { in_shape, argmax }
                    } else {
                        Cache::AvgPool { in_shape }
                    }
                });
                Ok((y, cache))
            }
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                let y = x.reshape(&full_shape(&out_shape))?;
                Ok((y, record.then_some(Cache::Flatten { in_shape })))
            }
        }
    }

    /// Propagates `grad` through the layer, accumulating parameter gradients
    /// into `grads` when requested.
    pub(crate) fn backward(
        &self,
        params: &ParameterSet,
        cache: &Cache,
        grad: Tensor,
        want_input: bool,
        grads: Option<&mut Gradients>,
    ) -> Result<Option<Tensor>, NnError> {
        let mismatch = || NnError::TapeMismatch(self.name().to_string());
        match (self, cache) {
            (Layer::Conv2d { name, in_ch, out_ch, kernel, padding }, Cache::Conv { input }) => {
                let g = ConvGeom {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    padding: *padding,
                    height: input.shape()[2],
                    width: input.shape()[3],
                };
                let w = params.tensor(&format!("{name}.weight"))?;
                let (dx, dp) = conv_backward(&g, input.batch(), input.data(), w.data(), grad.data(), want_input, grads.is_some());
                if let (Some(gs), Some((dw, db))) = (grads, dp) {
                    gs.accumulate(&format!("{name}.weight"), Tensor::new(w.shape().to_vec(), dw)?)?;
                    gs.accumulate(&format!("{name}.bias"), Tensor::new(vec![*out_ch], db)?)?;
                }
                dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()
            }
            (Layer::Dense { name, in_features, out_features }, Cache::Dense { input }) => {
                let w = params.tensor(&format!("{name}.weight"))?;
                let (dx, dp) = dense_backward(
                    input.batch(),
                    *in_features,
                    *out_features,
                    input.data(),
                    w.data(),
                    grad.data(),
                    want_input,
                    grads.is_some(),
                );
                if let (Some(gs), Some((dw, db))) = (grads, dp) {
                    gs.accumulate(&format!("{name}.weight"), Tensor::new(w.shape().to_vec(), dw)?)?;
                    gs.accumulate(&format!("{name}.bias"), Tensor::new(vec![*out_features], db)?)?;
                }
                dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()
            }
            (Layer::BatchNorm2d { name, channels }, cache) => batch_norm_backward(params, name, *channels, cache, grad, grads),
            (Layer::Elu, Cache::Activation { output }) => Ok(Some(zip_grad(grad, output, |g, y| if y > 0.0 { g } else { g * (y + 1.0) }))),
            (Layer::Relu, Cache::Activation { output }) => Ok(Some(zip_grad(grad, output, |g, y| if y > 0.0 { g } else { 0.0 }))),
            (Layer::Sigmoid, Cache::Activation { output }) => Ok(Some(zip_grad(grad, output, |g, y| g * y * (1.0 - y)))),
            (Layer::AvgPool2, Cache::AvgPool { in_shape }) => {
                let (h, w) = (in_shape[2], in_shape[3]);
                let (oh, ow) = (h / 2, w / 2);
                let planes = in_shape[0] * in_shape[1];
                let mut dx = vec![0.0f32; planes * h * w];
                let gd = grad.data();
                for plane in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gd[plane * oh * ow + oy * ow + ox] * 0.25;
                            let base = plane * h * w;
                            dx[base + 2 * oy * w + 2 * ox] += g;
                            dx[base + 2 * oy * w + 2 * ox + 1] += g;
                            dx[base + (2 * oy + 1) * w + 2 * ox] += g;
                            dx[base + (2 * oy + 1) * w + 2 * ox + 1] += g;
                        }
                    }
                }
                Ok(Some(Tensor::new(in_shape.clone(), dx)?))
            }
            (Layer::MaxPool2, Cache::MaxPool { in_shape, argmax }) => {
                let (h, w) = (in_shape[2], in_shape[3]);
                let per_plane = (h / 2) * (w / 2);
                let mut dx = vec![0.0f32; in_shape.iter().product()];
                for (o, (&g, &src)) in grad.data().iter().zip(argmax).enumerate() {
                    let plane = o / per_plane;
                    dx[plane * h * w + src as usize] += g;
                }
                Ok(Some(Tensor::new(in_shape.clone(), dx)?))
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => Ok(Some(grad.reshape(in_shape)?)),
            _ => Err(mismatch()),
        }
    }
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn zip_grad(mut grad: Tensor, output: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        *g = f(*g, y);
    }
    grad
}

fn batch_norm_forward(
    params: &ParameterSet,
    name: &str,
    channels: usize,
    mut x: Tensor,
    mode: Mode,
    record: bool,
) -> Result<(Tensor, Option<Cache>), NnError> {
    let gamma = params.tensor(&format!("{name}.gamma"))?.data().to_vec();
    let beta = params.tensor(&format!("{name}.beta"))?.data().to_vec();
    let batch = x.batch();
    let hw: usize = x.shape()[2..].iter().product();
    let count = (batch * hw) as f64;
    match mode {
        Mode::Train => {
            let mut mean = vec![0.0f32; channels];
            let mut var_unbiased = vec![0.0f32; channels];
            let mut inv_std = vec![0.0f32; channels];
            let mut mean64 = vec![0.0f64; channels];
            let mut inv_std64 = vec![0.0f64; channels];
            {
                let d = x.data();
                for c in 0..channels {
                    let mut s = 0.0f64;
                    for b in 0..batch {
                        let off = (b * channels + c) * hw;
                        s += d[off..off + hw].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let m = s / count;
                    let mut ss = 0.0f64;
                    for b in 0..batch {
                        let off = (b * channels + c) * hw;
                        ss += d[off..off + hw].iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
                    }
                    let var = ss / count;
                    mean64[c] = m;
                    inv_std64[c] = 1.0 / (var + BN_EPS as f64).sqrt();
                    mean[c] = m as f32;
                    var_unbiased[c] = if count > 1.0 { (ss / (count - 1.0)) as f32 } else { var as f32 };
                    inv_std[c] = inv_std64[c] as f32;
                }
            }
            let d = x.data_mut();
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    for v in &mut d[off..off + hw] {
                        *v = ((*v as f64 - mean64[c]) * inv_std64[c]) as f32;
                    }
                }
            }
            let xhat = record.then(|| x.clone());
            let d = x.data_mut();
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    for v in &mut d[off..off + hw] {
                        *v = *v * gamma[c] + beta[c];
                    }
                }
            }
            let cache = xhat.map(|xhat| Cache::BatchNormTrain { xhat, inv_std, mean, var_unbiased });
            Ok((x, cache))
        }
        Mode::Eval => {
            let rm = params.tensor(&format!("{name}.running_mean"))?.data();
            let rv = params.tensor(&format!("{name}.running_var"))?.data();
            let inv_std: Vec<f32> = rv.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let d = x.data_mut();
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    for v in &mut d[off..off + hw] {
                        *v = (*v - rm[c]) * inv_std[c];
                    }
                }
            }
            let xhat = record.then(|| x.clone());
            let d = x.data_mut();
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    for v in &mut d[off..off + hw] {
                        *v = *v * gamma[c] + beta[c];
                    }
                }
            }
            Ok((x, xhat.map(|xhat| Cache::BatchNormEval { xhat, inv_std })))
        }
    }
}

fn batch_norm_backward(
    params: &ParameterSet,
    name: &str,
    channels: usize,
    cache: &Cache,
    mut grad: Tensor,
    grads: Option<&mut Gradients>,
) -> Result<Option<Tensor>, NnError> {
    let gamma = params.tensor(&format!("{name}.gamma"))?.data();
    let batch = grad.batch();
    let hw: usize = grad.shape()[2..].iter().product();
    match cache {
        Cache::BatchNormTrain { xhat, inv_std, .. } => {
            let m = (batch * hw) as f64;
            let mut dgamma = vec![0.0f32; channels];
            let mut dbeta = vec![0.0f32; channels];
            let xh = xhat.data();
            {
                let g = grad.data();
                for c in 0..channels {
                    let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                    for b in 0..batch {
                        let off = (b * channels + c) * hw;
                        for i in off..off + hw {
                            sg += g[i] as f64;
                            sgx += (g[i] * xh[i]) as f64;
                        }
                    }
                    dbeta[c] = sg as f32;
                    dgamma[c] = sgx as f32;
                }
            }
            let g = grad.data_mut();
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    let k = gamma[c] * inv_std[c];
                    let mean_g = (dbeta[c] as f64 / m) as f32;
                    let mean_gx = (dgamma[c] as f64 / m) as f32;
                    for i in off..off + hw {
                        g[i] = k * (g[i] - mean_g - xh[i] * mean_gx);
                    }
                }
            }
            if let Some(gs) = grads {
                gs.accumulate(&format!("{name}.gamma"), Tensor::new(vec![channels], dgamma)?)?;
                gs.accumulate(&format!("{name}.beta"), Tensor::new(vec![channels], dbeta)?)?;
            }
            Ok(Some(grad))
        }
        Cache::BatchNormEval { xhat, inv_std } => {
            if let Some(gs) = grads {
                let mut dgamma = vec![0.0f32; channels];
                let mut dbeta = vec![0.0f32; channels];
                let (g, xh) = (grad.data(), xhat.data());
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * hw;
                        for i in off..off + hw {
                            dbeta[c] += g[i];
                            dgamma[c] += g[i] * xh[i];
                        }
                    }
                }
                gs.accumulate(&format!("{name}.gamma"), Tensor::new(vec![channels], dgamma)?)?;
                gs.accumulate(&format!("{name}.beta"), Tensor::new(vec![channels], dbeta)?)?;
            }
            let g = grad.data_mut();
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    let k = gamma[c] * inv_std[c];
                    for v in &mut g[off..off + hw] {
                        *v *= k;
                    }
                }
            }
            Ok(Some(grad))
        }
        _ => Err(NnError::TapeMismatch(name.to_string())),
    }
}

/// Running-statistics update from a train-mode batch norm cache.
pub(crate) fn commit_running_stats(params: &mut ParameterSet, name: &str, cache: &Cache) -> Result<(), NnError> {
    if let Cache::BatchNormTrain { mean, var_unbiased, .. } = cache {
        let rm = params.tensor_mut(&format!("{name}.running_mean"))?;
        for (r, &m) in rm.data_mut().iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = params.tensor_mut(&format!("{name}.running_var"))?;
        for (r, &v) in rv.data_mut().iter_mut().zip(var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
    Ok(())
}
