//! The fixed menu of layers with hand-derived forward and backward passes.
//!
//! Shapes below are per example; every kernel runs over a leading batch axis.
//! Spatial layers take `[channels, height, width]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected `[inputs] -> [outputs]`.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// 3x3 convolution, stride 1, zero "same" padding.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
    },
    /// 2x2 max pooling, stride 2; odd edges form partial windows (ceil mode).
    MaxPool2x2,
    /// Nearest-neighbour 2x upsampling.
    Upsample2x2,
    /// Normalises each channel (or feature, for flat inputs) over the batch.
    BatchNorm {
        channels: usize,
    },
    Relu,
    Sigmoid,
    /// Keeps the top-left `height x width` window.
    Crop {
        height: usize,
        width: usize,
    },
    /// Grows to `height x width` by repeating the last row and column.
    Pad {
        height: usize,
        width: usize,
    },
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |name: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::Shape(format!("{name} expects [c, h, w], got {input:?}"))),
            }
        };
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(Error::Shape(format!("dense expects [{inputs}], got {input:?}")));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                let (c, h, w) = spatial("conv3x3")?;
                if c != *in_channels {
                    return Err(Error::Shape(format!("conv3x3 expects {in_channels} channels, got {c}")));
                }
                Ok(vec![*out_channels, h, w])
            }
            LayerSpec::MaxPool2x2 => {
                let (c, h, w) = spatial("maxpool2x2")?;
                Ok(vec![c, h.div_ceil(2), w.div_ceil(2)])
            }
            LayerSpec::Upsample2x2 => {
                let (c, h, w) = spatial("upsample2x2")?;
                Ok(vec![c, 2 * h, 2 * w])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.first() != Some(channels) || (input.len() != 1 && input.len() != 3) {
                    return Err(Error::Shape(format!(
                        "batchnorm({channels}) expects [{channels}] or [{channels}, h, w], got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Crop { height, width } => {
                let (c, h, w) = spatial("crop")?;
                if *height > h || *width > w || *height == 0 || *width == 0 {
                    return Err(Error::Shape(format!("cannot crop {h}x{w} to {height}x{width}")));
                }
                Ok(vec![c, *height, *width])
            }
            LayerSpec::Pad { height, width } => {
                let (c, h, w) = spatial("pad")?;
                if *height < h || *width < w {
                    return Err(Error::Shape(format!("cannot pad {h}x{w} to {height}x{width}")));
                }
                Ok(vec![c, *height, *width])
            }
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() || shape.contains(&0) {
                    return Err(Error::Shape(format!("cannot reshape {input:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => in_channels * out_channels * 9 + out_channels,
            LayerSpec::BatchNorm { channels } => 2 * channels,
            _ => 0,
        }
    }

    /// Fan-in and fan-out of the weight tensor, for layers that have one.
    pub(crate) fn fans(&self) -> Option<(usize, usize)> {
        match self {
            LayerSpec::Dense { inputs, outputs } => Some((*inputs, *outputs)),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => Some((in_channels * 9, out_channels * 9)),
            _ => None,
        }
    }

    /// Number of weight entries (excluding bias) for layers with fans.
    pub(crate) fn weight_count(&self) -> usize {
        match self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs,
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => in_channels * out_channels * 9,
            _ => 0,
        }
    }
}

/// Batch-norm moving averages used at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// What a layer keeps from a training-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Nothing,
    Input(Vec<f64>),
    Columns(Vec<Vec<f64>>),
    Output(Vec<f64>),
    Argmax(Vec<usize>),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64> },
}

pub(crate) struct Ctx<'a> {
    pub spec: &'a LayerSpec,
    pub params: &'a [f64],
    pub in_shape: &'a [usize],
    pub out_shape: &'a [usize],
}

pub(crate) fn forward(ctx: &Ctx<'_>, running: Option<&mut RunningStats>, x: &Tensor, train: bool) -> (Tensor, Cache) {
    let batch = x.batch();
    let mut shape = vec![batch];
    shape.extend_from_slice(ctx.out_shape);
    let (data, cache) = match ctx.spec {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, b) = ctx.params.split_at(inputs * outputs);
            let mut y = Vec::with_capacity(batch * outputs);
            for _ in 0..batch {
                y.extend_from_slice(b);
            }
            gemm(
                x.data(),
                Layout::row_major(batch, *inputs),
                w,
                Layout::transposed(*outputs, *inputs),
                &mut y,
                1.0,
            );
            let cache = if train {
                Cache::Input(x.data().to_vec())
            } else {
                Cache::Nothing
            };
            (y, cache)
        }
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
        } => {
            let (h, w) = (ctx.in_shape[1], ctx.in_shape[2]);
            let hw = h * w;
            let in_len = in_channels * hw;
            let (weights, bias) = ctx.params.split_at(in_channels * out_channels * 9);
            let per_example: Vec<(Vec<f64>, Vec<f64>)> = x
                .data()
                .par_chunks(in_len)
                .map(|xe| {
                    let cols = im2col(xe, *in_channels, h, w);
                    let mut y = Vec::with_capacity(out_channels * hw);
                    for &bo in bias {
                        y.extend(std::iter::repeat_n(bo, hw));
                    }
                    gemm(
                        weights,
                        Layout::row_major(*out_channels, in_channels * 9),
                        &cols,
                        Layout::row_major(in_channels * 9, hw),
                        &mut y,
                        1.0,
                    );
                    (y, cols)
                })
                .collect();
            let mut y = Vec::with_capacity(batch * out_channels * hw);
            let mut cols = Vec::with_capacity(if train { batch } else { 0 });
            for (ye, ce) in per_example {
                y.extend_from_slice(&ye);
                if train {
                    cols.push(ce);
                }
            }
            let cache = if train { Cache::Columns(cols) } else { Cache::Nothing };
            (y, cache)
        }
        LayerSpec::MaxPool2x2 => {
            let (c, h, w) = (ctx.in_shape[0], ctx.in_shape[1], ctx.in_shape[2]);
            let (oh, ow) = (ctx.out_shape[1], ctx.out_shape[2]);
            let mut y = Vec::with_capacity(batch * c * oh * ow);
            let mut arg = Vec::with_capacity(if train { y.capacity() } else { 0 });
            for plane in x.data().chunks(h * w) {
                let base = y.len() / (oh * ow) * (h * w);
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = 0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let (r, s) = (2 * i + di, 2 * j + dj);
                                if r < h && s < w && plane[r * w + s] > best {
                                    best = plane[r * w + s];
                                    at = r * w + s;
                                }
                            }
                        }
                        y.push(best);
                        if train {
                            arg.push(base + at);
                        }
                    }
                }
            }
            let cache = if train { Cache::Argmax(arg) } else { Cache::Nothing };
            (y, cache)
        }
        LayerSpec::Upsample2x2 => {
            let (h, w) = (ctx.in_shape[1], ctx.in_shape[2]);
            let ow = 2 * w;
            let mut y = Vec::with_capacity(x.len() * 4);
            for plane in x.data().chunks(h * w) {
                for r in 0..2 * h {
                    for s in 0..ow {
                        y.push(plane[(r / 2) * w + s / 2]);
                    }
                }
            }
            (y, Cache::Nothing)
        }
        LayerSpec::BatchNorm { channels } => {
            let spread: usize = ctx.in_shape[1..].iter().product();
            let stats = running.expect("batchnorm layer without running statistics");
            batchnorm_forward(ctx.params, stats, x.data(), batch, *channels, spread, train)
        }
        LayerSpec::Relu => {
            let y: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
            let cache = if train {
                Cache::Output(y.clone())
            } else {
                Cache::Nothing
            };
            (y, cache)
        }
        LayerSpec::Sigmoid => {
            let y: Vec<f64> = x.data().iter().map(|&v| sigmoid(v)).collect();
            let cache = if train {
                Cache::Output(y.clone())
            } else {
                Cache::Nothing
            };
            (y, cache)
        }
        LayerSpec::Crop { height, width } => {
            let w = ctx.in_shape[2];
            let h = ctx.in_shape[1];
            let mut y = Vec::with_capacity(batch * ctx.in_shape[0] * height * width);
            for plane in x.data().chunks(h * w) {
                for r in 0..*height {
                    y.extend_from_slice(&plane[r * w..r * w + width]);
                }
            }
            (y, Cache::Nothing)
        }
        LayerSpec::Pad { height, width } => {
            let (h, w) = (ctx.in_shape[1], ctx.in_shape[2]);
            let mut y = Vec::with_capacity(batch * ctx.in_shape[0] * height * width);
            for plane in x.data().chunks(h * w) {
                for r in 0..*height {
                    let row = &plane[r.min(h - 1) * w..][..w];
                    y.extend_from_slice(row);
                    y.extend(std::iter::repeat_n(row[w - 1], width - w));
                }
            }
            (y, Cache::Nothing)
        }
        LayerSpec::Reshape { .. } => (x.data().to_vec(), Cache::Nothing),
    };
    (Tensor::from_parts(shape, data), cache)
}

/// Accumulates parameter gradients into `grads` and returns the input gradient.
pub(crate) fn backward(ctx: &Ctx<'_>, grads: &mut [f64], cache: Cache, dy: &Tensor) -> Result<Tensor> {
    let batch = dy.batch();
    let mut shape = vec![batch];
    shape.extend_from_slice(ctx.in_shape);
    let missing = || Error::State("backward without a training-mode forward pass".into());
    let dx = match (ctx.spec, cache) {
        (LayerSpec::Dense { inputs, outputs }, Cache::Input(x)) => {
            let (w, _) = ctx.params.split_at(inputs * outputs);
            let (gw, gb) = grads.split_at_mut(inputs * outputs);
            gemm(
                dy.data(),
                Layout::transposed(batch, *outputs),
                &x,
                Layout::row_major(batch, *inputs),
                gw,
                1.0,
            );
            for row in dy.data().chunks(*outputs) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut dx = vec![0.0; batch * inputs];
            gemm(
                dy.data(),
                Layout::row_major(batch, *outputs),
                w,
                Layout::row_major(*outputs, *inputs),
                &mut dx,
                0.0,
            );
            dx
        }
        (
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            },
            Cache::Columns(cols),
        ) => {
            let (h, w) = (ctx.in_shape[1], ctx.in_shape[2]);
            let hw = h * w;
            let k = in_channels * 9;
            let weights = &ctx.params[..out_channels * k];
            let per_example: Vec<(Vec<f64>, Vec<f64>)> = dy
                .data()
                .par_chunks(out_channels * hw)
                .zip(cols.par_iter())
                .map(|(dye, ce)| {
                    let mut g = vec![0.0; out_channels * k + out_channels];
                    gemm(
                        dye,
                        Layout::row_major(*out_channels, hw),
                        ce,
                        Layout::transposed(k, hw),
                        &mut g[..out_channels * k],
                        0.0,
                    );
                    for (o, plane) in dye.chunks(hw).enumerate() {
                        g[out_channels * k + o] = plane.iter().sum();
                    }
                    let mut dcols = vec![0.0; k * hw];
                    gemm(
                        weights,
                        Layout::transposed(*out_channels, k),
                        dye,
                        Layout::row_major(*out_channels, hw),
                        &mut dcols,
                        0.0,
                    );
                    (g, col2im(&dcols, *in_channels, h, w))
                })
                .collect();
            // fixed-order reduction keeps the sum independent of thread count
            let mut dx = Vec::with_capacity(batch * in_channels * hw);
            for (g, dxe) in per_example {
                for (acc, v) in grads.iter_mut().zip(&g) {
                    *acc += v;
                }
                dx.extend_from_slice(&dxe);
            }
            dx
        }
        (LayerSpec::MaxPool2x2, Cache::Argmax(arg)) => {
            let mut dx = vec![0.0; batch * ctx.in_shape.iter().product::<usize>()];
            for (&at, &d) in arg.iter().zip(dy.data()) {
                dx[at] += d;
            }
            dx
        }
        (LayerSpec::Upsample2x2, _) => {
            let (h, w) = (ctx.in_shape[1], ctx.in_shape[2]);
            let ow = 2 * w;
            let mut dx = vec![0.0; batch * ctx.in_shape.iter().product::<usize>()];
            for (plane, dplane) in dx.chunks_mut(h * w).zip(dy.data().chunks(4 * h * w)) {
                for r in 0..2 * h {
                    for s in 0..ow {
                        plane[(r / 2) * w + s / 2] += dplane[r * ow + s];
                    }
                }
            }
            dx
        }
        (LayerSpec::BatchNorm { channels }, Cache::Norm { xhat, inv_std }) => {
            let spread: usize = ctx.in_shape[1..].iter().product();
            batchnorm_backward(ctx.params, grads, &xhat, &inv_std, dy.data(), batch, *channels, spread)
        }
        (LayerSpec::Relu, Cache::Output(y)) => dy
            .data()
            .iter()
            .zip(&y)
            .map(|(&d, &o)| if o > 0.0 { d } else { 0.0 })
            .collect(),
        (LayerSpec::Sigmoid, Cache::Output(y)) => dy.data().iter().zip(&y).map(|(&d, &o)| d * o * (1.0 - o)).collect(),
        (LayerSpec::Crop { height, width }, _) => {
            let (h, w) = (ctx.in_shape[1], ctx.in_shape[2]);
            let mut dx = vec![0.0; batch * ctx.in_shape.iter().product::<usize>()];
            for (plane, dplane) in dx.chunks_mut(h * w).zip(dy.data().chunks(height * width)) {
                for r in 0..*height {
                    plane[r * w..r * w + width].copy_from_slice(&dplane[r * width..][..*width]);
                }
            }
            dx
        }
        (LayerSpec::Pad { height, width }, _) => {
            let (h, w) = (ctx.in_shape[1], ctx.in_shape[2]);
            let mut dx = vec![0.0; batch * ctx.in_shape.iter().product::<usize>()];
            for (plane, dplane) in dx.chunks_mut(h * w).zip(dy.data().chunks(height * width)) {
                for r in 0..*height {
                    for s in 0..*width {
                        plane[r.min(h - 1) * w + s.min(w - 1)] += dplane[r * width + s];
                    }
                }
            }
            dx
        }
        (LayerSpec::Reshape { .. }, _) => dy.data().to_vec(),
        _ => return Err(missing()),
    };
    Ok(Tensor::from_parts(shape, dx))
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn im2col(x: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; channels * 9 * hw];
    for c in 0..channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for kh in 0..3 {
            for kw in 0..3 {
                let row = &mut cols[((c * 3 + kh) * 3 + kw) * hw..][..hw];
                for i in 0..h {
                    let r = i as isize + kh as isize - 1;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let s = j as isize + kw as isize - 1;
                        if s >= 0 && s < w as isize {
                            row[i * w + j] = plane[r as usize * w + s as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; channels * hw];
    for c in 0..channels {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for kh in 0..3 {
            for kw in 0..3 {
                let row = &cols[((c * 3 + kh) * 3 + kw) * hw..][..hw];
                for i in 0..h {
                    let r = i as isize + kh as isize - 1;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let s = j as isize + kw as isize - 1;
                        if s >= 0 && s < w as isize {
                            plane[r as usize * w + s as usize] += row[i * w + j];
                        }
                    }
                }
            }
        }
    }
    x
}

// data layout is [batch, channels, spread]; statistics pool batch and spread
fn batchnorm_forward(
    params: &[f64],
    stats: &mut RunningStats,
    x: &[f64],
    batch: usize,
    channels: usize,
    spread: usize,
    train: bool,
) -> (Vec<f64>, Cache) {
    let (gamma, beta) = params.split_at(channels);
    let idx = |b: usize, c: usize, s: usize| (b * channels + c) * spread + s;
    let count = (batch * spread) as f64;
    let mut y = vec![0.0; x.len()];
    if !train {
        for c in 0..channels {
            let inv = 1.0 / (stats.var[c] + BN_EPSILON).sqrt();
            for b in 0..batch {
                for s in 0..spread {
                    let i = idx(b, c, s);
                    y[i] = gamma[c] * (x[i] - stats.mean[c]) * inv + beta[c];
                }
            }
        }
        return (y, Cache::Nothing);
    }
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; channels];
    for c in 0..channels {
        let mut sum = 0.0;
        for b in 0..batch {
            for s in 0..spread {
                sum += x[idx(b, c, s)];
            }
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for b in 0..batch {
            for s in 0..spread {
                let d = x[idx(b, c, s)] - mean;
                sq += d * d;
            }
        }
        let var = sq / count;
        let inv = 1.0 / (var + BN_EPSILON).sqrt();
        inv_std[c] = inv;
        for b in 0..batch {
            for s in 0..spread {
                let i = idx(b, c, s);
                xhat[i] = (x[i] - mean) * inv;
                y[i] = gamma[c] * xhat[i] + beta[c];
            }
        }
        stats.mean[c] = BN_MOMENTUM * stats.mean[c] + (1.0 - BN_MOMENTUM) * mean;
        stats.var[c] = BN_MOMENTUM * stats.var[c] + (1.0 - BN_MOMENTUM) * var;
    }
    (y, Cache::Norm { xhat, inv_std })
}

#[allow(clippy::too_many_arguments)]
fn batchnorm_backward(
    params: &[f64],
    grads: &mut [f64],
    xhat: &[f64],
    inv_std: &[f64],
    dy: &[f64],
    batch: usize,
    channels: usize,
    spread: usize,
) -> Vec<f64> {
    let gamma = &params[..channels];
    let (ggamma, gbeta) = grads.split_at_mut(channels);
    let idx = |b: usize, c: usize, s: usize| (b * channels + c) * spread + s;
    let count = (batch * spread) as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            for s in 0..spread {
                let i = idx(b, c, s);
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat[i];
            }
        }
        ggamma[c] += sum_dy_xhat;
        gbeta[c] += sum_dy;
        let scale = gamma[c] * inv_std[c] / count;
        for b in 0..batch {
            for s in 0..spread {
                let i = idx(b, c, s);
                dx[i] = scale * (count * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
    dx
}
