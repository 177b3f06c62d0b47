//! Layer kinds used by the estimator network, each with a hand-written
//! reverse pass. Layers cache what their backward pass needs during
//! `forward` and accumulate parameter gradients into the parameter tensors.
//!
//! Convolutions are cross-correlations over `[batch, channels, length]`
//! tensors. Transposed-convolution weights are laid out `[in, out, kernel]`,
//! which makes `conv_transpose1d` with a given weight array the exact adjoint
//! of `conv1d` with the same array.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Result, Tensor, TensorError};

pub const BATCH_NORM_EPS: f64 = 1e-6;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm1d {
        features: usize,
    },
    ReLU,
    /// `[B, C, L] -> [B, C*L]`
    Flatten,
    /// `[B, C*L] -> [B, C, L]`; the decoder's counterpart to `Flatten`.
    Unflatten {
        channels: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TensorError::Config(format!("{msg} in {self:?}")));
        match *self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, stride, .. }
            | LayerSpec::ConvTranspose1d { in_channels, out_channels, kernel, stride, .. } => {
                if kernel == 0 {
                    return bad("kernel size must be >= 1");
                }
                if stride == 0 {
                    return bad("stride must be >= 1");
                }
                if in_channels == 0 || out_channels == 0 {
                    return bad("channel counts must be >= 1");
                }
            }
            LayerSpec::Dense { in_features, out_features } => {
                if in_features == 0 || out_features == 0 {
                    return bad("feature counts must be >= 1");
                }
            }
            LayerSpec::BatchNorm1d { features } => {
                if features == 0 {
                    return bad("feature count must be >= 1");
                }
            }
            LayerSpec::Unflatten { channels } => {
                if channels == 0 {
                    return bad("channel count must be >= 1");
                }
            }
            LayerSpec::ReLU | LayerSpec::Flatten => {}
        }
        Ok(())
    }
}

pub fn conv1d_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if padded < kernel {
        return Err(TensorError::Shape(format!(
            "conv1d: padded length {padded} shorter than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv_transpose1d_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    let full = ((len - 1) * stride + kernel + output_padding) as i64;
    let out = full - 2 * padding as i64;
    if out <= 0 {
        return Err(TensorError::Shape(format!(
            "conv_transpose1d: computed output length {out} is not positive"
        )));
    }
    Ok(out as usize)
}

/// Range of positions `t` in `0..count` for which `t*stride + k - padding`
/// lands inside `0..limit`.
#[inline]
fn tap_range(k: usize, stride: usize, padding: usize, limit: usize, count: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    // t*stride + k - padding <= limit - 1
    let top = limit as i64 - 1 + padding as i64 - k as i64;
    if top < 0 {
        return (0, 0);
    }
    let hi = ((top as usize) / stride + 1).min(count);
    (lo.min(hi), hi)
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    t.expect_rank(3, what)?;
    let s = t.shape();
    Ok((s[0], s[1], s[2]))
}

/// `C = alpha * A B + beta * C` for row-major `A: m x k`, `B: k x n`,
/// `C: m x n`, where either input may be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the asserted slice extents
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Gathers `[B, C, len]` into a `[C*kernel, B*count]` matrix whose entry
/// `(c*kernel + k, b*count + t)` is `x[b, c, t*stride + k - padding]` (zero
/// outside the signal).
fn im2col(x: &[f64], dims: (usize, usize, usize), kernel: usize, stride: usize, padding: usize, count: usize) -> Vec<f64> {
    let (batch, ch, len) = dims;
    let cols = batch * count;
    let mut out = vec![0.0; ch * kernel * cols];
    for c in 0..ch {
        for k in 0..kernel {
            let (t0, t1) = tap_range(k, stride, padding, len, count);
            let row = &mut out[(c * kernel + k) * cols..][..cols];
            for b in 0..batch {
                let xr = &x[(b * ch + c) * len..][..len];
                let dst = &mut row[b * count..][..count];
                for t in t0..t1 {
                    dst[t] = xr[t * stride + k - padding];
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters the matrix back, summing overlaps.
fn col2im(cols: &[f64], dims: (usize, usize, usize), kernel: usize, stride: usize, padding: usize, count: usize) -> Vec<f64> {
    let (batch, ch, len) = dims;
    let width = batch * count;
    let mut x = vec![0.0; batch * ch * len];
    for c in 0..ch {
        for k in 0..kernel {
            let (t0, t1) = tap_range(k, stride, padding, len, count);
            let row = &cols[(c * kernel + k) * width..][..width];
            for b in 0..batch {
                let xr = &mut x[(b * ch + c) * len..][..len];
                let src = &row[b * count..][..count];
                for t in t0..t1 {
                    xr[t * stride + k - padding] += src[t];
                }
            }
        }
    }
    x
}

/// `[C, B*L]` (channel-major) to `[B, C, L]`, adding `bias[c]` when given.
fn channel_major_to_batch(y: &[f64], batch: usize, ch: usize, len: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; batch * ch * len];
    for c in 0..ch {
        let add = bias.map_or(0.0, |b| b[c]);
        for b in 0..batch {
            let src = &y[c * batch * len + b * len..][..len];
            let dst = &mut out[(b * ch + c) * len..][..len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + add;
            }
        }
    }
    out
}

/// `[B, C, L]` to `[C, B*L]`.
fn batch_to_channel_major(x: &[f64], batch: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..ch {
            out[c * batch * len + b * len..][..len].copy_from_slice(&x[(b * ch + c) * len..][..len]);
        }
    }
    out
}

/// Per-channel sums of a `[B, C, L]` array.
fn channel_sums(g: &[f64], batch: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; ch];
    for b in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            *o += g[(b * ch + c) * len..][..len].iter().sum::<f64>();
        }
    }
    out
}

/// Cross-correlation. `weight` is `[out, in, kernel]`, `bias` is `[out]`.
pub fn conv1d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (batch, c_in, len) = dims3(input, "conv1d")?;
    let (c_out, w_in, kernel) = dims3(weight, "conv1d weight")?;
    if w_in != c_in {
        return Err(TensorError::Shape(format!(
            "conv1d: input has {c_in} channels, weight expects {w_in}"
        )));
    }
    if bias.numel() != c_out {
        return Err(TensorError::Shape(format!("conv1d: bias length {} != {c_out}", bias.numel())));
    }
    let len_out = conv1d_output_len(len, kernel, stride, padding)?;
    let cols = im2col(input.data(), (batch, c_in, len), kernel, stride, padding, len_out);
    let mut y = vec![0.0; c_out * batch * len_out];
    gemm(c_out, c_in * kernel, batch * len_out, weight.data(), false, &cols, false, 0.0, &mut y);
    let y = channel_major_to_batch(&y, batch, c_out, len_out, Some(bias.data()));
    Tensor::new(vec![batch, c_out, len_out], y)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv1d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, c_in, len) = dims3(input, "conv1d")?;
    let (c_out, _, kernel) = dims3(weight, "conv1d weight")?;
    let len_out = conv1d_output_len(len, kernel, stride, padding)?;
    if grad_out.shape() != [batch, c_out, len_out] {
        return Err(TensorError::Shape(format!(
            "conv1d backward: grad shape {:?} != {:?}",
            grad_out.shape(),
            [batch, c_out, len_out]
        )));
    }
    let g = batch_to_channel_major(grad_out.data(), batch, c_out, len_out);
    let cols = im2col(input.data(), (batch, c_in, len), kernel, stride, padding, len_out);
    let rows = c_in * kernel;
    let width = batch * len_out;
    let mut gw = vec![0.0; c_out * rows];
    gemm(c_out, width, rows, &g, false, &cols, true, 0.0, &mut gw);
    let mut gcols = vec![0.0; rows * width];
    gemm(rows, c_out, width, weight.data(), true, &g, false, 0.0, &mut gcols);
    let gx = col2im(&gcols, (batch, c_in, len), kernel, stride, padding, len_out);
    let gb = channel_sums(grad_out.data(), batch, c_out, len_out);
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![c_out], gb)?,
    ))
}

/// Transposed convolution. `weight` is `[in, out, kernel]`, `bias` is `[out]`.
pub fn conv_transpose1d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (batch, c_in, len) = dims3(input, "conv_transpose1d")?;
    let (w_in, c_out, kernel) = dims3(weight, "conv_transpose1d weight")?;
    if w_in != c_in {
        return Err(TensorError::Shape(format!(
            "conv_transpose1d: input has {c_in} channels, weight expects {w_in}"
        )));
    }
    if bias.numel() != c_out {
        return Err(TensorError::Shape(format!(
            "conv_transpose1d: bias length {} != {c_out}",
            bias.numel()
        )));
    }
    let len_out = conv_transpose1d_output_len(len, kernel, stride, padding, output_padding)?;
    let x = batch_to_channel_major(input.data(), batch, c_in, len);
    let rows = c_out * kernel;
    let mut cols = vec![0.0; rows * batch * len];
    gemm(rows, c_in, batch * len, weight.data(), true, &x, false, 0.0, &mut cols);
    let mut y = col2im(&cols, (batch, c_out, len_out), kernel, stride, padding, len);
    for b in 0..batch {
        for (o, &bo) in bias.data().iter().enumerate() {
            y[(b * c_out + o) * len_out..][..len_out].iter_mut().for_each(|v| *v += bo);
        }
    }
    Tensor::new(vec![batch, c_out, len_out], y)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv_transpose1d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, c_in, len) = dims3(input, "conv_transpose1d")?;
    let (_, c_out, kernel) = dims3(weight, "conv_transpose1d weight")?;
    let len_out = conv_transpose1d_output_len(len, kernel, stride, padding, output_padding)?;
    if grad_out.shape() != [batch, c_out, len_out] {
        return Err(TensorError::Shape(format!(
            "conv_transpose1d backward: grad shape {:?} != {:?}",
            grad_out.shape(),
            [batch, c_out, len_out]
        )));
    }
    let gcols = im2col(grad_out.data(), (batch, c_out, len_out), kernel, stride, padding, len);
    let x = batch_to_channel_major(input.data(), batch, c_in, len);
    let rows = c_out * kernel;
    let width = batch * len;
    let mut gx = vec![0.0; c_in * width];
    gemm(c_in, rows, width, weight.data(), false, &gcols, false, 0.0, &mut gx);
    let gx = channel_major_to_batch(&gx, batch, c_in, len, None);
    let mut gw = vec![0.0; c_in * rows];
    gemm(c_in, width, rows, &x, false, &gcols, true, 0.0, &mut gw);
    let gb = channel_sums(grad_out.data(), batch, c_out, len_out);
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![c_out], gb)?,
    ))
}

/// `y = x W^T + b` with `W` stored `[out, in]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank(2, "dense")?;
    weight.expect_rank(2, "dense weight")?;
    let (batch, n_in) = (input.shape()[0], input.shape()[1]);
    let (n_out, w_in) = (weight.shape()[0], weight.shape()[1]);
    if w_in != n_in || bias.numel() != n_out {
        return Err(TensorError::Shape(format!(
            "dense: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut y: Vec<f64> = (0..batch).flat_map(|_| bias.data().iter().copied()).collect();
    gemm(batch, n_in, n_out, input.data(), false, weight.data(), true, 1.0, &mut y);
    Tensor::new(vec![batch, n_out], y)
}

pub fn dense_backward(grad_out: &Tensor, input: &Tensor, weight: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, n_in) = (input.shape()[0], input.shape()[1]);
    let n_out = weight.shape()[0];
    if grad_out.shape() != [batch, n_out] {
        return Err(TensorError::Shape(format!(
            "dense backward: grad shape {:?} != {:?}",
            grad_out.shape(),
            [batch, n_out]
        )));
    }
    let g = grad_out.data();
    let mut gx = vec![0.0; batch * n_in];
    gemm(batch, n_out, n_in, g, false, weight.data(), false, 0.0, &mut gx);
    let mut gw = vec![0.0; n_out * n_in];
    gemm(n_out, batch, n_in, g, true, input.data(), false, 0.0, &mut gw);
    let mut gb = vec![0.0; n_out];
    for row in g.chunks(n_out) {
        for (a, b) in gb.iter_mut().zip(row) {
            *a += b;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![n_out], gb)?,
    ))
}

fn accumulate(param: &mut Tensor, grad: &Tensor) {
    for (a, b) in param.grad_mut().iter_mut().zip(grad.data()) {
        *a += b;
    }
}

fn uniform_init<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    padding: usize,
    cache: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
    cache: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    cache: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
}

/// Batch normalization over `[B, C]` or `[B, C, L]`; statistics per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BatchNormCache>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv1d(Conv1d),
    ConvTranspose1d(ConvTranspose1d),
    Dense(Dense),
    BatchNorm1d(BatchNorm1d),
    ReLU { mask: Option<Vec<bool>> },
    Flatten { shape: Option<Vec<usize>> },
    Unflatten { channels: usize, shape: Option<Vec<usize>> },
}

impl Layer {
    /// Builds a layer with fan-in scaled uniform weights and zero biases.
    pub fn from_spec<R: Rng>(spec: &LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, stride, padding } => {
                let n = out_channels * in_channels * kernel;
                Layer::Conv1d(Conv1d {
                    weight: Tensor::parameter(
                        vec![out_channels, in_channels, kernel],
                        uniform_init(rng, n, in_channels * kernel),
                    )?,
                    bias: Tensor::parameter(vec![out_channels], vec![0.0; out_channels])?,
                    stride,
                    padding,
                    cache: None,
                })
            }
            LayerSpec::ConvTranspose1d { in_channels, out_channels, kernel, stride, padding, output_padding } => {
                let n = out_channels * in_channels * kernel;
                Layer::ConvTranspose1d(ConvTranspose1d {
                    weight: Tensor::parameter(
                        vec![in_channels, out_channels, kernel],
                        uniform_init(rng, n, in_channels * kernel),
                    )?,
                    bias: Tensor::parameter(vec![out_channels], vec![0.0; out_channels])?,
                    stride,
                    padding,
                    output_padding,
                    cache: None,
                })
            }
            LayerSpec::Dense { in_features, out_features } => Layer::Dense(Dense {
                weight: Tensor::parameter(
                    vec![out_features, in_features],
                    uniform_init(rng, in_features * out_features, in_features),
                )?,
                bias: Tensor::parameter(vec![out_features], vec![0.0; out_features])?,
                cache: None,
            }),
            LayerSpec::BatchNorm1d { features } => Layer::BatchNorm1d(BatchNorm1d {
                gamma: Tensor::parameter(vec![features], vec![1.0; features])?,
                beta: Tensor::parameter(vec![features], vec![0.0; features])?,
                running_mean: Tensor::new(vec![features], vec![0.0; features])?,
                running_var: Tensor::new(vec![features], vec![1.0; features])?,
                cache: None,
            }),
            LayerSpec::ReLU => Layer::ReLU { mask: None },
            LayerSpec::Flatten => Layer::Flatten { shape: None },
            LayerSpec::Unflatten { channels } => Layer::Unflatten { channels, shape: None },
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::ConvTranspose1d(_) => "conv_transpose1d",
            Layer::Dense(_) => "dense",
            Layer::BatchNorm1d(_) => "batchnorm1d",
            Layer::ReLU { .. } => "relu",
            Layer::Flatten { .. } => "flatten",
            Layer::Unflatten { .. } => "unflatten",
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => {
                let out = conv1d_forward(input, &l.weight, &l.bias, l.stride, l.padding)?;
                l.cache = Some(input.clone());
                Ok(out)
            }
            Layer::ConvTranspose1d(l) => {
                let out = conv_transpose1d_forward(input, &l.weight, &l.bias, l.stride, l.padding, l.output_padding)?;
                l.cache = Some(input.clone());
                Ok(out)
            }
            Layer::Dense(l) => {
                let out = dense_forward(input, &l.weight, &l.bias)?;
                l.cache = Some(input.clone());
                Ok(out)
            }
            Layer::BatchNorm1d(l) => l.forward(input, mode),
            Layer::ReLU { mask } => {
                let m: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
                let data = input.data().iter().map(|&v| v.max(0.0)).collect();
                *mask = Some(m);
                Tensor::new(input.shape().to_vec(), data)
            }
            Layer::Flatten { shape } => {
                input.expect_rank(3, "flatten")?;
                let s = input.shape();
                *shape = Some(s.to_vec());
                input.clone().reshape(vec![s[0], s[1] * s[2]])
            }
            Layer::Unflatten { channels, shape } => {
                input.expect_rank(2, "unflatten")?;
                let s = input.shape();
                if !s[1].is_multiple_of(*channels) {
                    return Err(TensorError::Shape(format!(
                        "unflatten: {} features not divisible into {channels} channels",
                        s[1]
                    )));
                }
                *shape = Some(s.to_vec());
                input.clone().reshape(vec![s[0], *channels, s[1] / *channels])
            }
        }
    }

    /// Propagates `grad_out` to the layer input and accumulates parameter gradients.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let name = self.name();
        match self {
            Layer::Conv1d(l) => {
                let x = l.cache.as_ref().ok_or(TensorError::MissingCache(name))?;
                let (gx, gw, gb) = conv1d_backward(grad_out, x, &l.weight, l.stride, l.padding)?;
                accumulate(&mut l.weight, &gw);
                accumulate(&mut l.bias, &gb);
                Ok(gx)
            }
            Layer::ConvTranspose1d(l) => {
                let x = l.cache.as_ref().ok_or(TensorError::MissingCache(name))?;
                let (gx, gw, gb) =
                    conv_transpose1d_backward(grad_out, x, &l.weight, l.stride, l.padding, l.output_padding)?;
                accumulate(&mut l.weight, &gw);
                accumulate(&mut l.bias, &gb);
                Ok(gx)
            }
            Layer::Dense(l) => {
                let x = l.cache.as_ref().ok_or(TensorError::MissingCache(name))?;
                let (gx, gw, gb) = dense_backward(grad_out, x, &l.weight)?;
                accumulate(&mut l.weight, &gw);
                accumulate(&mut l.bias, &gb);
                Ok(gx)
            }
            Layer::BatchNorm1d(l) => l.backward(grad_out),
            Layer::ReLU { mask } => {
                let m = mask.as_ref().ok_or(TensorError::MissingCache(name))?;
                if m.len() != grad_out.numel() {
                    return Err(TensorError::Shape("relu backward: gradient size changed".into()));
                }
                let data = grad_out.data().iter().zip(m).map(|(&g, &on)| if on { g } else { 0.0 }).collect();
                Tensor::new(grad_out.shape().to_vec(), data)
            }
            Layer::Flatten { shape } | Layer::Unflatten { shape, .. } => {
                let s = shape.as_ref().ok_or(TensorError::MissingCache(name))?;
                grad_out.clone().reshape(s.clone())
            }
        }
    }

    /// Trainable parameters in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&l.weight, &l.bias],
            Layer::ConvTranspose1d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm1d(l) => vec![&l.gamma, &l.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvTranspose1d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm1d(l) => vec![&mut l.gamma, &mut l.beta],
            _ => vec![],
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm1d(l) => vec![&l.running_mean, &l.running_var],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm1d(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => vec![],
        }
    }

    /// Parameters followed by buffers.
    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm1d(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
            other => other.params_mut(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv1d(l) => l.cache = None,
            Layer::ConvTranspose1d(l) => l.cache = None,
            Layer::Dense(l) => l.cache = None,
            Layer::BatchNorm1d(l) => l.cache = None,
            Layer::ReLU { mask } => *mask = None,
            Layer::Flatten { shape } | Layer::Unflatten { shape, .. } => *shape = None,
        }
    }
}

impl BatchNorm1d {
    fn layout(input: &Tensor, features: usize) -> Result<(usize, usize)> {
        let s = input.shape();
        let (batch, channels, len) = match s.len() {
            2 => (s[0], s[1], 1),
            3 => (s[0], s[1], s[2]),
            _ => return Err(TensorError::Shape(format!("batchnorm1d: unsupported shape {s:?}"))),
        };
        if channels != features {
            return Err(TensorError::Shape(format!(
                "batchnorm1d: {channels} channels, layer has {features}"
            )));
        }
        Ok((batch, len))
    }

    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let features = self.gamma.numel();
        let (batch, len) = Self::layout(input, features)?;
        if mode == Mode::Train && batch < 2 {
            return Err(TensorError::BatchTooSmall(batch));
        }
        let x = input.data();
        let count = (batch * len) as f64;
        let mut mean = vec![0.0; features];
        let mut var = vec![0.0; features];
        match mode {
            Mode::Train => {
                for b in 0..batch {
                    for c in 0..features {
                        mean[c] += x[(b * features + c) * len..][..len].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for b in 0..batch {
                    for c in 0..features {
                        var[c] += x[(b * features + c) * len..][..len]
                            .iter()
                            .map(|v| (v - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                let unbias = count / (count - 1.0);
                let rm = self.running_mean.data_mut();
                for c in 0..features {
                    rm[c] = (1.0 - BATCH_NORM_MOMENTUM) * rm[c] + BATCH_NORM_MOMENTUM * mean[c];
                }
                let rv = self.running_var.data_mut();
                for c in 0..features {
                    rv[c] = (1.0 - BATCH_NORM_MOMENTUM) * rv[c] + BATCH_NORM_MOMENTUM * var[c] * unbias;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(self.running_mean.data());
                var.copy_from_slice(self.running_var.data());
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let mut normalized = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for b in 0..batch {
            for c in 0..features {
                let off = (b * features + c) * len;
                for i in off..off + len {
                    let n = (x[i] - mean[c]) * inv_std[c];
                    normalized[i] = n;
                    y[i] = gamma[c] * n + beta[c];
                }
            }
        }
        self.cache = Some(BatchNormCache { normalized, inv_std, shape: input.shape().to_vec(), mode });
        Tensor::new(input.shape().to_vec(), y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(TensorError::MissingCache("batchnorm1d"))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(TensorError::Shape("batchnorm1d backward: gradient shape changed".into()));
        }
        let features = self.gamma.numel();
        let batch = cache.shape[0];
        let len = if cache.shape.len() == 3 { cache.shape[2] } else { 1 };
        let g = grad_out.data();
        let xn = &cache.normalized;
        let mut sum_g = vec![0.0; features];
        let mut sum_gx = vec![0.0; features];
        for b in 0..batch {
            for c in 0..features {
                let off = (b * features + c) * len;
                for i in off..off + len {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * xn[i];
                }
            }
        }
        let count = (batch * len) as f64;
        let gamma = self.gamma.data().to_vec();
        let mut gx = vec![0.0; g.len()];
        for b in 0..batch {
            for c in 0..features {
                let off = (b * features + c) * len;
                let scale = gamma[c] * cache.inv_std[c];
                for i in off..off + len {
                    gx[i] = match cache.mode {
                        Mode::Train => scale * (g[i] - sum_g[c] / count - xn[i] * sum_gx[c] / count),
                        Mode::Eval => scale * g[i],
                    };
                }
            }
        }
        for (a, b) in self.gamma.grad_mut().iter_mut().zip(&sum_gx) {
            *a += b;
        }
        for (a, b) in self.beta.grad_mut().iter_mut().zip(&sum_g) {
            *a += b;
        }
        Tensor::new(cache.shape.clone(), gx)
    }
}

/// A straight chain of layers.
#[derive(Debug, Clone)]
pub struct Sequential {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new<R: Rng>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::from_spec(s, rng)).collect::<Result<Vec<_>>>()?;
        Ok(Self { specs, layers })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Runs every layer, rejecting non-finite activations with the offending layer index.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(&x, mode)?;
            if !x.is_finite() {
                return Err(TensorError::NonFiniteActivation { layer: i });
            }
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    /// Every layer's parameters and buffers, layer by layer.
    pub fn state(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params().into_iter().chain(l.buffers())).collect()
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.state_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

impl PartialEq for Layer {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name() && self.params() == other.params() && self.buffers() == other.buffers()
    }
}
