//! Forward and backward kernels for the fixed layer set.
//!
//! Layouts are channels-first and contiguous:
//!
//! * conv input `[C_in, H, W]`, weights `[C_out, C_in, kh, kw]`, bias `[C_out]`
//! * pooling input `[..., H, W]` (leading axes are treated as channels)
//! * fully connected input `[n]`, weights `[m, n]`, bias `[m]`
//!
//! Every forward kernel has a `*_forward` twin that also returns the context
//! its backward pass needs. Backward kernels validate that context against the
//! parameters and gradient they are handed and refuse stale caches.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

// ── convolution ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(
        input: &[usize],
        weights: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [c_in, h, w] = <[usize; 3]>::try_from(input)
            .map_err(|_| Error::shape(format!("conv2d input must be [C,H,W], got {input:?}")))?;
        let [c_out, wc, kh, kw] = <[usize; 4]>::try_from(weights).map_err(|_| {
            Error::shape(format!(
                "conv2d weights must be [C_out,C_in,kh,kw], got {weights:?}"
            ))
        })?;
        if wc != c_in {
            return Err(Error::shape(format!(
                "conv2d weights expect {wc} input channels, input has {c_in}"
            )));
        }
        if bias != [c_out] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{c_out}], got {bias:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be >= 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {pad}"
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Output columns `ox` whose sampled input column `ox*s + kx - p` is in range.
    #[inline]
    fn valid_range(&self, k: usize, out: usize, size: usize) -> (usize, usize) {
        // need 0 <= o*s + k - p < size
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi = if size + self.pad > k {
            ((size + self.pad - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Context kept by [`conv2d_forward`] for [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct Conv2dCache {
    input: Tensor,
    geom: ConvGeom,
}

/// Output shape of a convolution, for shape inference.
pub fn conv2d_output_shape(
    input: &[usize],
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Vec<usize>> {
    let c_in = input.first().copied().unwrap_or(0);
    let g = ConvGeom::new(
        input,
        &[c_out, c_in, kernel, kernel],
        &[c_out],
        stride,
        padding,
    )?;
    Ok(vec![g.c_out, g.oh, g.ow])
}

pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(
        input.shape(),
        weights.shape(),
        bias.shape(),
        stride,
        padding,
    )?;
    Ok(conv2d_raw(&g, input.data(), weights.data(), bias.data()))
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Conv2dCache)> {
    let g = ConvGeom::new(
        input.shape(),
        weights.shape(),
        bias.shape(),
        stride,
        padding,
    )?;
    let out = conv2d_raw(&g, input.data(), weights.data(), bias.data());
    Ok((
        out,
        Conv2dCache {
            input: input.clone(),
            geom: g,
        },
    ))
}

fn conv2d_raw(g: &ConvGeom, x: &[f32], w: &[f32], b: &[f32]) -> Tensor {
    let plane = g.oh * g.ow;
    let mut out = vec![0f32; g.c_out * plane];
    for co in 0..g.c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(b[co]);
        for ci in 0..g.c_in {
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid_range(ky, g.oh, g.h);
                for kx in 0..g.kw {
                    let wv = w[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = g.valid_range(kx, g.ow, g.w);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            for (ov, xv) in orow[ox0..ox1].iter_mut().zip(&row[ix0..]) {
                                *ov += wv * xv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.oh, g.ow], out).expect("conv output shape")
}

/// Accumulates weight and bias gradients into `grad_weights` / `grad_bias`
/// and returns the input gradient when `want_input_grad` is set.
pub fn conv2d_backward_accumulate(
    cache: &Conv2dCache,
    weights: &Tensor,
    grad_output: &Tensor,
    grad_weights: &mut Tensor,
    grad_bias: &mut Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let g = &cache.geom;
    let wshape = [g.c_out, g.c_in, g.kh, g.kw];
    if weights.shape() != wshape || grad_weights.shape() != wshape {
        return Err(Error::shape(format!(
            "stale conv2d cache: cached weights {wshape:?}, got {:?}",
            weights.shape()
        )));
    }
    if grad_output.shape() != [g.c_out, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "stale conv2d cache: expected grad_output [{}, {}, {}], got {:?}",
            g.c_out,
            g.oh,
            g.ow,
            grad_output.shape()
        )));
    }
    if grad_bias.shape() != [g.c_out] {
        return Err(Error::shape("conv2d bias gradient shape mismatch"));
    }
    let x = cache.input.data();
    let w = weights.data();
    let go = grad_output.data();
    let plane = g.oh * g.ow;
    let mut gi = if want_input_grad {
        vec![0f32; x.len()]
    } else {
        Vec::new()
    };
    let gw = grad_weights.data_mut();
    let gb = grad_bias.data_mut();
    for co in 0..g.c_out {
        let gplane = &go[co * plane..(co + 1) * plane];
        gb[co] += gplane.iter().sum::<f32>();
        for ci in 0..g.c_in {
            let base = ci * g.h * g.w;
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid_range(ky, g.oh, g.h);
                for kx in 0..g.kw {
                    let widx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                    let wv = w[widx];
                    let (ox0, ox1) = g.valid_range(kx, g.ow, g.w);
                    let mut acc = 0f32;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                        let rbase = base + iy * g.w;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx - g.pad;
                            let gv = grow[ox];
                            acc += gv * x[rbase + ix];
                            if want_input_grad {
                                gi[rbase + ix] += wv * gv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok(if want_input_grad {
        Some(Tensor::new(vec![g.c_in, g.h, g.w], gi)?)
    } else {
        None
    })
}

pub fn conv2d_backward(
    cache: &Conv2dCache,
    weights: &Tensor,
    grad_output: &Tensor,
) -> Result<LayerGrad> {
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[cache.geom.c_out]);
    let gi = conv2d_backward_accumulate(cache, weights, grad_output, &mut gw, &mut gb, true)?
        .expect("input grad requested");
    Ok(LayerGrad {
        grad_input: gi,
        grad_weights: gw,
        grad_bias: gb,
    })
}

// ── pooling ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    window: usize,
    mode: PoolMode,
    argmax: Vec<usize>,
}

pub fn pool2d_output_shape(input: &[usize], window: usize) -> Result<Vec<usize>> {
    if input.len() < 2 {
        return Err(Error::shape(format!(
            "pool2d needs at least [H, W], got {input:?}"
        )));
    }
    if window == 0 {
        return Err(Error::shape("pool2d window must be >= 1"));
    }
    let (h, w) = (input[input.len() - 2], input[input.len() - 1]);
    if h % window != 0 || w % window != 0 {
        return Err(Error::shape(format!(
            "pool2d window {window} does not divide spatial dims {h}x{w}"
        )));
    }
    let mut out = input.to_vec();
    let n = out.len();
    out[n - 2] = h / window;
    out[n - 1] = w / window;
    Ok(out)
}

pub fn pool2d(input: &Tensor, window: usize, mode: PoolMode) -> Result<Tensor> {
    pool2d_forward(input, window, mode).map(|(t, _)| t)
}

pub fn pool2d_forward(
    input: &Tensor,
    window: usize,
    mode: PoolMode,
) -> Result<(Tensor, PoolCache)> {
    let out_shape = pool2d_output_shape(input.shape(), window)?;
    let s = input.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let channels: usize = s[..s.len() - 2].iter().product();
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = vec![0f32; channels * oh * ow];
    let mut argmax = if mode == PoolMode::Max {
        vec![0usize; out.len()]
    } else {
        Vec::new()
    };
    let inv = 1.0 / (window * window) as f32;
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let oi = (c * oh + oy) * ow + ox;
                match mode {
                    PoolMode::Avg => {
                        let mut acc = 0f32;
                        for dy in 0..window {
                            let row = (c * h + oy * window + dy) * w + ox * window;
                            acc += x[row..row + window].iter().sum::<f32>();
                        }
                        out[oi] = acc * inv;
                    }
                    PoolMode::Max => {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_i = 0;
                        for dy in 0..window {
                            let row = (c * h + oy * window + dy) * w + ox * window;
                            for dx in 0..window {
                                if x[row + dx] > best {
                                    best = x[row + dx];
                                    best_i = row + dx;
                                }
                            }
                        }
                        out[oi] = best;
                        argmax[oi] = best_i;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(out_shape, out)?,
        PoolCache {
            input_shape: s.to_vec(),
            window,
            mode,
            argmax,
        },
    ))
}

pub fn pool2d_backward(cache: &PoolCache, grad_output: &Tensor) -> Result<Tensor> {
    let expected = pool2d_output_shape(&cache.input_shape, cache.window)?;
    if grad_output.shape() != expected.as_slice() {
        return Err(Error::shape(format!(
            "stale pool2d cache: expected grad_output {expected:?}, got {:?}",
            grad_output.shape()
        )));
    }
    let s = &cache.input_shape;
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let channels: usize = s[..s.len() - 2].iter().product();
    let win = cache.window;
    let (oh, ow) = (h / win, w / win);
    let go = grad_output.data();
    let mut gi = vec![0f32; channels * h * w];
    match cache.mode {
        PoolMode::Max => {
            for (oi, &src) in cache.argmax.iter().enumerate() {
                gi[src] += go[oi];
            }
        }
        PoolMode::Avg => {
            let inv = 1.0 / (win * win) as f32;
            for c in 0..channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = go[(c * oh + oy) * ow + ox] * inv;
                        for dy in 0..win {
                            let row = (c * h + oy * win + dy) * w + ox * win;
                            gi[row..row + win].iter_mut().for_each(|v| *v += g);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(s.clone(), gi)
}

// ── fully connected ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct FcCache {
    input: Tensor,
    outputs: usize,
}

fn fc_check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let n = input.len();
    let [m, wn] = <[usize; 2]>::try_from(weights.shape()).map_err(|_| {
        Error::shape(format!(
            "fully_connected weights must be [m, n], got {:?}",
            weights.shape()
        ))
    })?;
    if input.ndim() != 1 || wn != n {
        return Err(Error::shape(format!(
            "fully_connected input {:?} does not match weights [{m}, {wn}]",
            input.shape()
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(format!(
            "fully_connected bias must be [{m}], got {:?}",
            bias.shape()
        )));
    }
    Ok((m, n))
}

pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = fc_check(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let out: Vec<f32> = (0..m)
        .map(|i| {
            let row = &w[i * n..(i + 1) * n];
            bias.data()[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>()
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(Tensor, FcCache)> {
    let out = fully_connected(input, weights, bias)?;
    let outputs = out.len();
    Ok((
        out,
        FcCache {
            input: input.clone(),
            outputs,
        },
    ))
}

pub fn fc_backward_accumulate(
    cache: &FcCache,
    weights: &Tensor,
    grad_output: &Tensor,
    grad_weights: &mut Tensor,
    grad_bias: &mut Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let n = cache.input.len();
    let m = cache.outputs;
    if weights.shape() != [m, n] || grad_weights.shape() != [m, n] {
        return Err(Error::shape(format!(
            "stale fc cache: cached weights [{m}, {n}], got {:?}",
            weights.shape()
        )));
    }
    if grad_output.shape() != [m] || grad_bias.shape() != [m] {
        return Err(Error::shape(format!(
            "stale fc cache: expected grad_output [{m}], got {:?}",
            grad_output.shape()
        )));
    }
    let x = cache.input.data();
    let w = weights.data();
    let go = grad_output.data();
    let gw = grad_weights.data_mut();
    let mut gi = if want_input_grad {
        vec![0f32; n]
    } else {
        Vec::new()
    };
    for i in 0..m {
        let g = go[i];
        if g == 0.0 {
            continue;
        }
        let grow = &mut gw[i * n..(i + 1) * n];
        for (gwv, xv) in grow.iter_mut().zip(x) {
            *gwv += g * xv;
        }
        if want_input_grad {
            let wrow = &w[i * n..(i + 1) * n];
            for (giv, wv) in gi.iter_mut().zip(wrow) {
                *giv += g * wv;
            }
        }
    }
    for (b, g) in grad_bias.data_mut().iter_mut().zip(go) {
        *b += g;
    }
    Ok(if want_input_grad {
        Some(Tensor::from_vec(gi))
    } else {
        None
    })
}

pub fn fc_backward(cache: &FcCache, weights: &Tensor, grad_output: &Tensor) -> Result<LayerGrad> {
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[grad_output.len()]);
    let gi = fc_backward_accumulate(cache, weights, grad_output, &mut gw, &mut gb, true)?
        .expect("input grad requested");
    Ok(LayerGrad {
        grad_input: gi,
        grad_weights: gw,
        grad_bias: gb,
    })
}
