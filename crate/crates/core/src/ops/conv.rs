//! 3D convolution: full, depthwise, and depthwise-separable.
//!
//! All convolutions run at stride 1 with "same"-size padding. Spatial
//! padding is symmetric zero; temporal padding is either causal replicate
//! (past side only, so outputs never depend on future frames) or symmetric
//! zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{sentinel, Tensor5};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Replicate,
}

/// Per-axis padding amounts. Spatial padding is always zero-mode; the
/// temporal mode is configurable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadSpec {
    pub t: (usize, usize),
    pub h: (usize, usize),
    pub w: (usize, usize),
    pub t_mode: PadMode,
}

impl PadSpec {
    /// Causal temporal padding (replicate, past side only) with symmetric
    /// zero spatial padding; preserves extents at stride 1.
    pub fn same_causal(k: (usize, usize, usize)) -> Self {
        Self {
            t: (k.0 - 1, 0),
            h: ((k.1 - 1) / 2, (k.1 - 1) / 2),
            w: ((k.2 - 1) / 2, (k.2 - 1) / 2),
            t_mode: PadMode::Replicate,
        }
    }

    /// Symmetric zero padding on every axis; preserves extents at stride 1.
    pub fn same_symmetric(k: (usize, usize, usize)) -> Self {
        Self {
            t: ((k.0 - 1) / 2, (k.0 - 1) / 2),
            h: ((k.1 - 1) / 2, (k.1 - 1) / 2),
            w: ((k.2 - 1) / 2, (k.2 - 1) / 2),
            t_mode: PadMode::Zero,
        }
    }

    fn validate(&self, k: (usize, usize, usize)) -> Result<()> {
        if self.t.0 + self.t.1 != k.0 - 1
            || self.h.0 + self.h.1 != k.1 - 1
            || self.w.0 + self.w.1 != k.2 - 1
        {
            return Err(Error::Config(format!(
                "padding {self:?} does not preserve extents for kernel {k:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Conv3dParams<S> {
    /// `(C_out, C_in, k_t, k_h, k_w)`.
    pub weight: Tensor5<S>,
    /// Length `C_out`.
    pub bias: Option<Vec<S>>,
    pub stride: (usize, usize, usize),
    pub pad: PadSpec,
}

impl<S: Scalar> Conv3dParams<S> {
    pub fn new(weight: Tensor5<S>, bias: Option<Vec<S>>, pad: PadSpec) -> Result<Self> {
        let [c_out, _c_in, kt, kh, kw] = weight.shape();
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel extents must be odd, got ({kt}, {kh}, {kw})"
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::Config(format!(
                    "bias length {} != output channels {c_out}",
                    b.len()
                )));
            }
        }
        pad.validate((kt, kh, kw))?;
        Ok(Self { weight, bias, stride: (1, 1, 1), pad })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize, usize) {
        let [_, _, kt, kh, kw] = self.weight.shape();
        (kt, kh, kw)
    }
}

#[derive(Clone, Debug)]
pub struct DwSepConv3dParams<S> {
    /// One filter per input channel: `(C_in, 1, k_t, k_h, k_w)`.
    pub depthwise: Tensor5<S>,
    pub dw_bias: Option<Vec<S>>,
    /// Cross-channel mix: `(C_out, C_in, 1, 1, 1)`.
    pub pointwise: Tensor5<S>,
    pub pw_bias: Option<Vec<S>>,
    pub pad: PadSpec,
}

impl<S: Scalar> DwSepConv3dParams<S> {
    pub fn new(
        depthwise: Tensor5<S>,
        dw_bias: Option<Vec<S>>,
        pointwise: Tensor5<S>,
        pw_bias: Option<Vec<S>>,
        pad: PadSpec,
    ) -> Result<Self> {
        let [c_dw, mult, kt, kh, kw] = depthwise.shape();
        let [c_out, c_in, pt, ph, pw_] = pointwise.shape();
        if mult != 1 {
            return Err(Error::Config(format!(
                "depthwise channel multiplicity must be 1, got {mult}"
            )));
        }
        if (pt, ph, pw_) != (1, 1, 1) {
            return Err(Error::Config("pointwise kernel must be 1x1x1".into()));
        }
        if c_dw != c_in {
            return Err(Error::Shape(format!(
                "depthwise channels {c_dw} != pointwise input channels {c_in}"
            )));
        }
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel extents must be odd, got ({kt}, {kh}, {kw})"
            )));
        }
        if let Some(b) = &dw_bias {
            if b.len() != c_dw {
                return Err(Error::Config("depthwise bias length mismatch".into()));
            }
        }
        if let Some(b) = &pw_bias {
            if b.len() != c_out {
                return Err(Error::Config("pointwise bias length mismatch".into()));
            }
        }
        pad.validate((kt, kh, kw))?;
        Ok(Self { depthwise, dw_bias, pointwise, pw_bias, pad })
    }

    pub fn in_channels(&self) -> usize {
        self.depthwise.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize, usize) {
        let [_, _, kt, kh, kw] = self.depthwise.shape();
        (kt, kh, kw)
    }
}

/// Accumulate `wv * x[n, ci]` shifted by tap `(dt, dh, dw)` into `acc`
/// (one output plane of extents `(t, h, w)`), honoring the pad spec.
/// The contiguous W runs keep per-element accumulation order fixed.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap<S: Scalar>(
    acc: &mut [S],
    xc: &[S],
    wv: S,
    dims: (usize, usize, usize),
    tap: (usize, usize, usize),
    pad: &PadSpec,
) {
    let (t, h, w) = dims;
    let (dt, dh, dw) = tap;
    let row = w;
    let frame = h * w;
    // Valid output-w range for this tap.
    let w_lo = pad.w.0.saturating_sub(dw);
    let w_hi = (w + pad.w.0).saturating_sub(dw).min(w);
    if w_lo >= w_hi {
        return;
    }
    let w_in_off = dw as isize - pad.w.0 as isize;
    for t_out in 0..t {
        let t_raw = t_out as isize + dt as isize - pad.t.0 as isize;
        let t_in = match pad.t_mode {
            PadMode::Replicate => t_raw.clamp(0, t as isize - 1) as usize,
            PadMode::Zero => {
                if t_raw < 0 || t_raw >= t as isize {
                    continue;
                }
                t_raw as usize
            }
        };
        for h_out in 0..h {
            let h_raw = h_out as isize + dh as isize - pad.h.0 as isize;
            if h_raw < 0 || h_raw >= h as isize {
                continue;
            }
            let out_base = t_out * frame + h_out * row;
            let in_base = t_in * frame + h_raw as usize * row;
            let dst = &mut acc[out_base + w_lo..out_base + w_hi];
            let src_lo = (in_base + w_lo) as isize + w_in_off;
            let src = &xc[src_lo as usize..src_lo as usize + (w_hi - w_lo)];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
}

/// Input-gradient half of the tap backward: scatter `wv * up` into `dxc` at
/// the coordinates the forward read.
#[inline]
fn backward_tap_input<S: Scalar>(
    up: &[S],
    dxc: &mut [S],
    wv: S,
    dims: (usize, usize, usize),
    tap: (usize, usize, usize),
    pad: &PadSpec,
) {
    let (t, h, w) = dims;
    let (dt, dh, dw) = tap;
    let row = w;
    let frame = h * w;
    let w_lo = pad.w.0.saturating_sub(dw);
    let w_hi = (w + pad.w.0).saturating_sub(dw).min(w);
    if w_lo >= w_hi {
        return;
    }
    let w_in_off = dw as isize - pad.w.0 as isize;
    for t_out in 0..t {
        let t_raw = t_out as isize + dt as isize - pad.t.0 as isize;
        let t_in = match pad.t_mode {
            PadMode::Replicate => t_raw.clamp(0, t as isize - 1) as usize,
            PadMode::Zero => {
                if t_raw < 0 || t_raw >= t as isize {
                    continue;
                }
                t_raw as usize
            }
        };
        for h_out in 0..h {
            let h_raw = h_out as isize + dh as isize - pad.h.0 as isize;
            if h_raw < 0 || h_raw >= h as isize {
                continue;
            }
            let out_base = t_out * frame + h_out * row;
            let in_base = t_in * frame + h_raw as usize * row;
            let src_lo = ((in_base + w_lo) as isize + w_in_off) as usize;
            let ups = &up[out_base + w_lo..out_base + w_hi];
            let dxs = &mut dxc[src_lo..src_lo + (w_hi - w_lo)];
            for (dx, &u) in dxs.iter_mut().zip(ups) {
                *dx += wv * u;
            }
        }
    }
}

/// Weight-gradient half of the tap backward: `Σ up ⊙ x` over the tap's
/// valid window.
#[inline]
fn backward_tap_weight<S: Scalar>(
    up: &[S],
    xc: &[S],
    dims: (usize, usize, usize),
    tap: (usize, usize, usize),
    pad: &PadSpec,
) -> S {
    let (t, h, w) = dims;
    let (dt, dh, dw) = tap;
    let row = w;
    let frame = h * w;
    let w_lo = pad.w.0.saturating_sub(dw);
    let w_hi = (w + pad.w.0).saturating_sub(dw).min(w);
    let mut dwv = S::zero();
    if w_lo >= w_hi {
        return dwv;
    }
    let w_in_off = dw as isize - pad.w.0 as isize;
    for t_out in 0..t {
        let t_raw = t_out as isize + dt as isize - pad.t.0 as isize;
        let t_in = match pad.t_mode {
            PadMode::Replicate => t_raw.clamp(0, t as isize - 1) as usize,
            PadMode::Zero => {
                if t_raw < 0 || t_raw >= t as isize {
                    continue;
                }
                t_raw as usize
            }
        };
        for h_out in 0..h {
            let h_raw = h_out as isize + dh as isize - pad.h.0 as isize;
            if h_raw < 0 || h_raw >= h as isize {
                continue;
            }
            let out_base = t_out * frame + h_out * row;
            let in_base = t_in * frame + h_raw as usize * row;
            let src_lo = ((in_base + w_lo) as isize + w_in_off) as usize;
            let ups = &up[out_base + w_lo..out_base + w_hi];
            let xs = &xc[src_lo..src_lo + (w_hi - w_lo)];
            for (&u, &xv) in ups.iter().zip(xs) {
                dwv += u * xv;
            }
        }
    }
    dwv
}

fn check_input<S: Scalar>(x: &Tensor5<S>, c_in: usize, op: &str) -> Result<()> {
    let [_, c, _, h, w] = x.shape();
    if c != c_in {
        return Err(Error::Shape(format!(
            "{op}: input has {c} channels, kernel expects {c_in}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("{op}: empty spatial extents")));
    }
    Ok(())
}

/// Full 3D convolution (stride 1, same-size output).
pub fn conv3d<S: Scalar>(x: &Tensor5<S>, p: &Conv3dParams<S>) -> Result<Tensor5<S>> {
    check_input(x, p.in_channels(), "conv3d")?;
    let [n, c_in, t, h, w] = x.shape();
    let c_out = p.out_channels();
    let (kt, kh, kw) = p.kernel();
    let mut out = Tensor5::zeros([n, c_out, t, h, w])?;
    let plane = t * h * w;
    let wdat = p.weight.as_slice();

    out.as_mut_slice()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(i, acc)| {
            let (ni, co) = (i / c_out, i % c_out);
            if let Some(b) = &p.bias {
                acc.fill(b[co]);
            }
            for ci in 0..c_in {
                let xc = x.chan(ni, ci);
                let wbase = ((co * c_in + ci) * kt) * kh * kw;
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let wv = wdat[wbase + (dt * kh + dh) * kw + dw];
                            accumulate_tap(acc, xc, wv, (t, h, w), (dt, dh, dw), &p.pad);
                        }
                    }
                }
            }
        });
    sentinel("conv3d", &[x.as_slice(), p.weight.as_slice()], out.as_slice());
    Ok(out)
}

/// Depthwise stage: output channel `m` depends only on input channel `m`.
pub fn depthwise_conv3d<S: Scalar>(x: &Tensor5<S>, p: &DwSepConv3dParams<S>) -> Result<Tensor5<S>> {
    check_input(x, p.in_channels(), "depthwise_conv3d")?;
    let [n, c, t, h, w] = x.shape();
    let (kt, kh, kw) = p.kernel();
    let mut out = Tensor5::zeros([n, c, t, h, w])?;
    let plane = t * h * w;
    let wdat = p.depthwise.as_slice();

    out.as_mut_slice()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(i, acc)| {
            let (ni, m) = (i / c, i % c);
            if let Some(b) = &p.dw_bias {
                acc.fill(b[m]);
            }
            let xc = x.chan(ni, m);
            let wbase = m * kt * kh * kw;
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let wv = wdat[wbase + (dt * kh + dh) * kw + dw];
                        accumulate_tap(acc, xc, wv, (t, h, w), (dt, dh, dw), &p.pad);
                    }
                }
            }
        });
    sentinel(
        "depthwise_conv3d",
        &[x.as_slice(), p.depthwise.as_slice()],
        out.as_slice(),
    );
    Ok(out)
}

fn pointwise_params<S: Scalar>(p: &DwSepConv3dParams<S>) -> Conv3dParams<S> {
    Conv3dParams {
        weight: p.pointwise.clone(),
        bias: p.pw_bias.clone(),
        stride: (1, 1, 1),
        pad: PadSpec::same_symmetric((1, 1, 1)),
    }
}

/// Depthwise-separable convolution: depthwise filtering then 1x1x1 mixing.
pub fn dwsep_conv3d<S: Scalar>(x: &Tensor5<S>, p: &DwSepConv3dParams<S>) -> Result<Tensor5<S>> {
    let mid = depthwise_conv3d(x, p)?;
    conv3d(&mid, &pointwise_params(p))
}

#[derive(Debug, Clone)]
pub struct Conv3dGrads<S> {
    pub input: Tensor5<S>,
    pub weight: Tensor5<S>,
    pub bias: Option<Vec<S>>,
}

/// Exact reverse-mode derivatives of `conv3d`.
pub fn conv3d_backward<S: Scalar>(
    x: &Tensor5<S>,
    p: &Conv3dParams<S>,
    upstream: &Tensor5<S>,
) -> Result<Conv3dGrads<S>> {
    check_input(x, p.in_channels(), "conv3d_backward")?;
    let [n, c_in, t, h, w] = x.shape();
    let c_out = p.out_channels();
    if upstream.shape() != [n, c_out, t, h, w] {
        return Err(Error::Shape(format!(
            "upstream shape {:?} does not mirror forward output",
            upstream.shape()
        )));
    }
    let (kt, kh, kw) = p.kernel();
    let mut d_input = x.zeros_like();
    let mut d_weight = p.weight.zeros_like();
    let plane = t * h * w;
    let wdat = p.weight.as_slice();
    let kvol = kt * kh * kw;

    // Input gradients: each (n, c_in) plane is owned by one task.
    d_input
        .as_mut_slice()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dxc)| {
            let (ni, ci) = (idx / c_in, idx % c_in);
            for co in 0..c_out {
                let up = upstream.chan(ni, co);
                let wbase = (co * c_in + ci) * kvol;
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let wv = wdat[wbase + (dt * kh + dh) * kw + dw];
                            backward_tap_input(up, dxc, wv, (t, h, w), (dt, dh, dw), &p.pad);
                        }
                    }
                }
            }
        });

    // Weight gradients: each c_out slab is owned by one task.
    d_weight
        .as_mut_slice()
        .par_chunks_mut(c_in * kvol)
        .enumerate()
        .for_each(|(co, dwc)| {
            for ni in 0..n {
                let up = upstream.chan(ni, co);
                for ci in 0..c_in {
                    let xc = x.chan(ni, ci);
                    for dt in 0..kt {
                        for dh in 0..kh {
                            for dw in 0..kw {
                                dwc[ci * kvol + (dt * kh + dh) * kw + dw] +=
                                    backward_tap_weight(up, xc, (t, h, w), (dt, dh, dw), &p.pad);
                            }
                        }
                    }
                }
            }
        });

    let d_bias = p.bias.as_ref().map(|b| {
        let mut db = vec![S::zero(); b.len()];
        for ni in 0..n {
            for (co, slot) in db.iter_mut().enumerate() {
                for &u in upstream.chan(ni, co) {
                    *slot += u;
                }
            }
        }
        db
    });
    Ok(Conv3dGrads { input: d_input, weight: d_weight, bias: d_bias })
}

#[derive(Debug, Clone)]
pub struct DwSepGrads<S> {
    pub input: Tensor5<S>,
    pub depthwise: Tensor5<S>,
    pub dw_bias: Option<Vec<S>>,
    pub pointwise: Tensor5<S>,
    pub pw_bias: Option<Vec<S>>,
}

fn depthwise_backward_inner<S: Scalar>(
    x: &Tensor5<S>,
    p: &DwSepConv3dParams<S>,
    upstream: &Tensor5<S>,
) -> (Tensor5<S>, Tensor5<S>, Option<Vec<S>>) {
    let [n, c, t, h, w] = x.shape();
    let (kt, kh, kw) = p.kernel();
    let mut d_input = x.zeros_like();
    let mut d_dw = p.depthwise.zeros_like();
    let plane = t * h * w;
    let kvol = kt * kh * kw;
    let wdat = p.depthwise.as_slice();

    d_input
        .as_mut_slice()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dxc)| {
            let (ni, m) = (idx / c, idx % c);
            let up = upstream.chan(ni, m);
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let wv = wdat[m * kvol + (dt * kh + dh) * kw + dw];
                        backward_tap_input(up, dxc, wv, (t, h, w), (dt, dh, dw), &p.pad);
                    }
                }
            }
        });

    d_dw.as_mut_slice()
        .par_chunks_mut(kvol)
        .enumerate()
        .for_each(|(m, dwc)| {
            for ni in 0..n {
                let up = upstream.chan(ni, m);
                let xc = x.chan(ni, m);
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            dwc[(dt * kh + dh) * kw + dw] +=
                                backward_tap_weight(up, xc, (t, h, w), (dt, dh, dw), &p.pad);
                        }
                    }
                }
            }
        });

    let d_bias = p.dw_bias.as_ref().map(|b| {
        let mut db = vec![S::zero(); b.len()];
        for ni in 0..n {
            for (m, slot) in db.iter_mut().enumerate() {
                for &u in upstream.chan(ni, m) {
                    *slot += u;
                }
            }
        }
        db
    });
    (d_input, d_dw, d_bias)
}

/// Gradients for the depthwise stage alone.
pub fn depthwise_conv3d_backward<S: Scalar>(
    x: &Tensor5<S>,
    p: &DwSepConv3dParams<S>,
    upstream: &Tensor5<S>,
) -> Result<(Tensor5<S>, Tensor5<S>, Option<Vec<S>>)> {
    check_input(x, p.in_channels(), "depthwise_conv3d_backward")?;
    if upstream.shape() != x.shape() {
        return Err(Error::Shape("upstream shape mismatch".into()));
    }
    Ok(depthwise_backward_inner(x, p, upstream))
}

/// Exact reverse-mode derivatives of `dwsep_conv3d`. The depthwise
/// intermediate is recomputed from `x`.
pub fn dwsep_conv3d_backward<S: Scalar>(
    x: &Tensor5<S>,
    p: &DwSepConv3dParams<S>,
    upstream: &Tensor5<S>,
) -> Result<DwSepGrads<S>> {
    let mid = depthwise_conv3d(x, p)?;
    let pw = pointwise_params(p);
    let pw_grads = conv3d_backward(&mid, &pw, upstream)?;
    let (d_input, d_dw, d_dwb) = depthwise_conv3d_backward(x, p, &pw_grads.input)?;
    Ok(DwSepGrads {
        input: d_input,
        depthwise: d_dw,
        dw_bias: d_dwb,
        pointwise: pw_grads.weight,
        pw_bias: pw_grads.bias,
    })
}

/// Expand a separable kernel into the equivalent full kernel:
/// `K_full[n, m, i, j, f] = pointwise[n, m] * depthwise[m, i, j, f]`,
/// with biases folded as `b[n] = pw_bias[n] + Σ_m pointwise[n, m] * dw_bias[m]`.
pub fn fold_dwsep_to_full<S: Scalar>(p: &DwSepConv3dParams<S>) -> Result<Conv3dParams<S>> {
    let [c_in, _, kt, kh, kw] = p.depthwise.shape();
    let c_out = p.out_channels();
    let mut full = Tensor5::zeros([c_out, c_in, kt, kh, kw])?;
    for n in 0..c_out {
        for m in 0..c_in {
            let pwv = p.pointwise.at(n, m, 0, 0, 0);
            for i in 0..kt {
                for j in 0..kh {
                    for f in 0..kw {
                        *full.at_mut(n, m, i, j, f) = pwv * p.depthwise.at(m, 0, i, j, f);
                    }
                }
            }
        }
    }
    let bias = match (&p.dw_bias, &p.pw_bias) {
        (None, None) => None,
        _ => {
            let mut b = p.pw_bias.clone().unwrap_or_else(|| vec![S::zero(); c_out]);
            if let Some(dwb) = &p.dw_bias {
                for (n, bn) in b.iter_mut().enumerate() {
                    for (m, &dv) in dwb.iter().enumerate() {
                        *bn += p.pointwise.at(n, m, 0, 0, 0) * dv;
                    }
                }
            }
            Some(b)
        }
    };
    Conv3dParams::new(full, bias, p.pad)
}

/// Closed-form parameter count of a full convolution.
pub fn conv3d_param_count(c_in: usize, c_out: usize, k: usize, bias: bool) -> u64 {
    (c_out * c_in * k * k * k + if bias { c_out } else { 0 }) as u64
}

/// Closed-form parameter count of a depthwise-separable convolution.
pub fn dwsep_param_count(c_in: usize, c_out: usize, k: usize, biases: bool) -> u64 {
    (c_in * k * k * k + c_in * c_out + if biases { c_in + c_out } else { 0 }) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_1x1x1(c: usize) -> Conv3dParams<f32> {
        let mut w = Tensor5::zeros([c, c, 1, 1, 1]).unwrap();
        for i in 0..c {
            *w.at_mut(i, i, 0, 0, 0) = 1.0;
        }
        Conv3dParams::new(w, None, PadSpec::same_symmetric((1, 1, 1))).unwrap()
    }

    fn rand_tensor(shape: crate::Shape5, seed: u64) -> Tensor5<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor5::from_fn(shape, |_, _, _, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn identity_convolution() {
        let x = rand_tensor([1, 3, 2, 3, 3], 7);
        let y = conv3d(&x, &identity_1x1x1(3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bias_only() {
        let x = Tensor5::<f32>::zeros([2, 2, 1, 2, 2]).unwrap();
        let w = Tensor5::zeros([3, 2, 3, 3, 3]).unwrap();
        let p = Conv3dParams::new(w, Some(vec![1.0, -2.0, 0.5]), PadSpec::same_symmetric((3, 3, 3)))
            .unwrap();
        let y = conv3d(&x, &p).unwrap();
        for n in 0..2 {
            for (c, &b) in [1.0f32, -2.0, 0.5].iter().enumerate() {
                assert!(y.chan(n, c).iter().all(|&v| v == b));
            }
        }
    }

    #[test]
    fn ones_kernel_center_sum() {
        // (1,1,1,3,3) all ones, 3x3x3 all-ones kernel, zero padding:
        // the center output sums the full 3x3 spatial window of one frame.
        let x = Tensor5::full([1, 1, 1, 3, 3], 1.0f32).unwrap();
        let w = Tensor5::full([1, 1, 3, 3, 3], 1.0f32).unwrap();
        let p = Conv3dParams::new(w, None, PadSpec::same_symmetric((3, 3, 3))).unwrap();
        let y = conv3d(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 3, 3]);
        assert_eq!(y.at(0, 0, 0, 1, 1), 9.0);
        // Corner sees a 2x2 window.
        assert_eq!(y.at(0, 0, 0, 0, 0), 4.0);
    }

    #[test]
    fn causal_never_reads_future() {
        // Perturb only the last frame; earlier outputs must not change.
        let base = rand_tensor([1, 1, 4, 3, 3], 3);
        let mut pert = base.clone();
        for h in 0..3 {
            for w in 0..3 {
                *pert.at_mut(0, 0, 3, h, w) += 1.0;
            }
        }
        let w = rand_tensor([1, 1, 3, 3, 3], 4);
        let p = Conv3dParams::new(w, None, PadSpec::same_causal((3, 3, 3))).unwrap();
        let ya = conv3d(&base, &p).unwrap();
        let yb = conv3d(&pert, &p).unwrap();
        for t in 0..3 {
            for h in 0..3 {
                for w_ in 0..3 {
                    assert_eq!(ya.at(0, 0, t, h, w_), yb.at(0, 0, t, h, w_));
                }
            }
        }
    }

    fn delta_dwsep(c: usize, k: usize) -> DwSepConv3dParams<f32> {
        let mut dw = Tensor5::zeros([c, 1, k, k, k]).unwrap();
        for m in 0..c {
            *dw.at_mut(m, 0, k / 2, k / 2, k / 2) = 1.0;
        }
        let mut pw = Tensor5::zeros([c, c, 1, 1, 1]).unwrap();
        for m in 0..c {
            *pw.at_mut(m, m, 0, 0, 0) = 1.0;
        }
        DwSepConv3dParams::new(dw, None, pw, None, PadSpec::same_symmetric((k, k, k))).unwrap()
    }

    #[test]
    fn depthwise_delta_is_identity() {
        let x = rand_tensor([1, 2, 3, 4, 4], 9);
        let p = delta_dwsep(2, 3);
        assert_eq!(depthwise_conv3d(&x, &p).unwrap(), x);
        assert_eq!(dwsep_conv3d(&x, &p).unwrap(), x);
    }

    #[test]
    fn depthwise_channel_isolation() {
        let mut x = Tensor5::<f32>::zeros([1, 2, 2, 3, 3]).unwrap();
        x.chan_mut(0, 0).iter_mut().for_each(|v| *v = 1.5);
        let p = DwSepConv3dParams::new(
            rand_tensor([2, 1, 3, 3, 3], 11),
            None,
            rand_tensor([2, 2, 1, 1, 1], 12),
            None,
            PadSpec::same_symmetric((3, 3, 3)),
        )
        .unwrap();
        let y = depthwise_conv3d(&x, &p).unwrap();
        assert!(y.chan(0, 1).iter().all(|&v| v == 0.0));
        assert!(y.chan(0, 0).iter().any(|&v| v != 0.0));
    }

    /// Brute-force per-channel 2D convolution oracle (kernel 1x3x3).
    #[test]
    fn depthwise_matches_naive_2d() {
        let x = rand_tensor([1, 2, 1, 2, 2], 21);
        let mut dw = Tensor5::zeros([2, 1, 1, 3, 3]).unwrap();
        for m in 0..2 {
            for j in 0..3 {
                for f in 0..3 {
                    *dw.at_mut(m, 0, 0, j, f) = 1.0 / 9.0;
                }
            }
        }
        let pw = {
            let mut p = Tensor5::zeros([2, 2, 1, 1, 1]).unwrap();
            *p.at_mut(0, 0, 0, 0, 0) = 1.0;
            *p.at_mut(1, 1, 0, 0, 0) = 1.0;
            p
        };
        let p = DwSepConv3dParams::new(dw.clone(), None, pw, None, PadSpec::same_symmetric((1, 3, 3)))
            .unwrap();
        let y = depthwise_conv3d(&x, &p).unwrap();
        for m in 0..2usize {
            for h in 0..2usize {
                for w in 0..2usize {
                    let mut acc = 0.0f32;
                    for j in 0..3usize {
                        for f in 0..3usize {
                            let hi = h as isize + j as isize - 1;
                            let wi = w as isize + f as isize - 1;
                            if hi >= 0 && hi < 2 && wi >= 0 && wi < 2 {
                                acc += dw.at(m, 0, 0, j, f) * x.at(0, m, 0, hi as usize, wi as usize);
                            }
                        }
                    }
                    assert!((y.at(0, m, 0, h, w) - acc).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dwsep_equals_folded_full_conv() {
        let p = DwSepConv3dParams::new(
            rand_tensor([3, 1, 3, 3, 3], 31),
            Some(vec![0.1, -0.2, 0.3]),
            rand_tensor([2, 3, 1, 1, 1], 32),
            Some(vec![0.5, -0.5]),
            PadSpec::same_causal((3, 3, 3)),
        )
        .unwrap();
        let x = rand_tensor([2, 3, 3, 4, 4], 33);
        let a = dwsep_conv3d(&x, &p).unwrap();
        let b = conv3d(&x, &fold_dwsep_to_full(&p).unwrap()).unwrap();
        let max = a.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() <= 1e-5 * max.max(1.0), "{u} vs {v}");
        }
    }

    #[test]
    fn param_count_closed_forms() {
        assert_eq!(dwsep_param_count(512, 512, 5, false), 326_144);
        assert_eq!(conv3d_param_count(512, 512, 5, false), 32_768_000);
        assert_eq!(conv3d_param_count(512, 512, 3, true), 7_078_400);
        assert_eq!(dwsep_param_count(512, 512, 5, true), 327_168);
    }

    #[test]
    fn identity_kernel_gradient_passes_through() {
        let x = rand_tensor([1, 2, 2, 3, 3], 41);
        let p = identity_1x1x1(2);
        let up = rand_tensor([1, 2, 2, 3, 3], 42);
        let g = conv3d_backward(&x, &p, &up).unwrap();
        assert_eq!(g.input, up);
    }

    #[test]
    fn linearity_of_bias_free_conv() {
        let p = Conv3dParams::new(
            rand_tensor([2, 2, 3, 3, 3], 51),
            None,
            PadSpec::same_symmetric((3, 3, 3)),
        )
        .unwrap();
        let x = rand_tensor([1, 2, 2, 4, 4], 52);
        let y = rand_tensor([1, 2, 2, 4, 4], 53);
        let lhs = conv3d(&x.scale(2.0).add(&y.scale(-3.0)).unwrap(), &p).unwrap();
        let rhs = conv3d(&x, &p)
            .unwrap()
            .scale(2.0)
            .add(&conv3d(&y, &p).unwrap().scale(-3.0))
            .unwrap();
        let max = lhs.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            assert!((a - b).abs() <= 1e-5 * max.max(1.0));
        }
    }

    #[test]
    fn non_odd_kernel_rejected() {
        let w = Tensor5::<f32>::zeros([1, 1, 2, 3, 3]).unwrap();
        assert!(matches!(
            Conv3dParams::new(w, None, PadSpec::same_symmetric((3, 3, 3))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor5::<f32>::zeros([1, 2, 1, 2, 2]).unwrap();
        let p = identity_1x1x1(3);
        assert!(matches!(conv3d(&x, &p), Err(Error::Shape(_))));
    }

    use crate::error::Error;
}
