//! Upsampling strategies: reference 3D pixel shuffle, 3D interpolation, and
//! the decoupled channel→time + framewise 2D pixel-shuffle scheme.
//!
//! Every shuffle-family op is a pure element rearrangement (a bijection) and
//! has an exact inverse; gradients of rearrangements are the inverse
//! rearrangement of the upstream gradient.
//!
//! Channel decomposition conventions, frozen here and exercised by the
//! equivalence oracle:
//! * `pixel_shuffle_3d` decomposes channels as `(c, dt, dh, dw)`, `dt`
//!   slowest: source channel `((c*r_t + dt)*r_s + dh)*r_s + dw`.
//! * `channel_to_time` places the temporal offset `j` in the slowest block:
//!   source channel `j*C' + c'`.
//! * `pixel_shuffle_2d_video` reads source channel
//!   `C*r*(w mod r) + C*(h mod r) + c` at `(h/r, w/r)`, framewise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleFactors {
    pub r_t: usize,
    pub r_s: usize,
}

impl UpsampleFactors {
    pub fn new(r_t: usize, r_s: usize) -> Result<Self> {
        if r_t == 0 || r_s == 0 {
            return Err(Error::Config("upsample factors must be >= 1".into()));
        }
        Ok(Self { r_t, r_s })
    }

    /// Channel blow-up a conv must produce ahead of this upsampler.
    pub fn channel_factor(&self) -> usize {
        self.r_t * self.r_s * self.r_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMode {
    Nearest,
    Trilinear,
}

fn require_divisible(c: usize, d: usize, op: &str) -> Result<usize> {
    if d == 0 || c % d != 0 {
        return Err(Error::Shape(format!(
            "{op}: channel count {c} not divisible by {d}"
        )));
    }
    Ok(c / d)
}

/// `(N, r_t·r_s²·C, T, H, W) → (N, C, r_t·T, r_s·H, r_s·W)`.
pub fn pixel_shuffle_3d<S: Scalar>(x: &Tensor5<S>, r_t: usize, r_s: usize) -> Result<Tensor5<S>> {
    let [n, c_in, t, h, w] = x.shape();
    let c_out = require_divisible(c_in, r_t * r_s * r_s, "pixel_shuffle_3d")?;
    let mut out = Tensor5::zeros([n, c_out, r_t * t, r_s * h, r_s * w])?;
    let src = x.as_slice();
    let [_, _, ot, oh, ow] = out.shape();
    let dst = out.as_mut_slice();
    // Each (source channel, source row) is contiguous; scatter it into the
    // output row with stride r_s.
    let mut row_at = 0;
    for ni in 0..n {
        for c in 0..c_out {
            for t2 in 0..ot {
                let (tt, dt) = (t2 / r_t, t2 % r_t);
                for h2 in 0..oh {
                    let (hh, dh) = (h2 / r_s, h2 % r_s);
                    let dst_row = &mut dst[row_at..row_at + ow];
                    for dw in 0..r_s {
                        let cs = ((c * r_t + dt) * r_s + dh) * r_s + dw;
                        let src_at = (((ni * c_in + cs) * t + tt) * h + hh) * w;
                        let src_row = &src[src_at..src_at + w];
                        for (d, &s) in dst_row.iter_mut().skip(dw).step_by(r_s).zip(src_row) {
                            *d = s;
                        }
                    }
                    row_at += ow;
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of `pixel_shuffle_3d`.
pub fn pixel_unshuffle_3d<S: Scalar>(x: &Tensor5<S>, r_t: usize, r_s: usize) -> Result<Tensor5<S>> {
    let [n, c_in, t, h, w] = x.shape();
    if r_t == 0 || r_s == 0 || t % r_t != 0 || h % r_s != 0 || w % r_s != 0 {
        return Err(Error::Shape(format!(
            "pixel_unshuffle_3d: extents ({t}, {h}, {w}) not divisible by ({r_t}, {r_s}, {r_s})"
        )));
    }
    let (it, ih, iw) = (t / r_t, h / r_s, w / r_s);
    let c_out = c_in * r_t * r_s * r_s;
    let mut out = Tensor5::zeros([n, c_out, it, ih, iw])?;
    let src = x.as_slice();
    let dst = out.as_mut_slice();
    let mut i = 0;
    for ni in 0..n {
        for q in 0..c_out {
            let dw = q % r_s;
            let dh = (q / r_s) % r_s;
            let dt = (q / (r_s * r_s)) % r_t;
            let c = q / (r_t * r_s * r_s);
            for tt in 0..it {
                for hh in 0..ih {
                    for ww in 0..iw {
                        dst[i] = src[(((ni * c_in + c) * t + tt * r_t + dt) * h + hh * r_s + dh) * w
                            + ww * r_s
                            + dw];
                        i += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `(N, r_t·C', T, H, W) → (N, C', r_t·T, H, W)`; temporal offset `j` comes
/// from the slowest channel block: `out[.., c', r_t·t + j, ..] = x[.., j·C' + c', t, ..]`.
pub fn channel_to_time<S: Scalar>(x: &Tensor5<S>, r_t: usize) -> Result<Tensor5<S>> {
    let [n, c_in, t, h, w] = x.shape();
    let c_out = require_divisible(c_in, r_t, "channel_to_time")?;
    let mut out = Tensor5::zeros([n, c_out, r_t * t, h, w])?;
    let frame = h * w;
    for ni in 0..n {
        for c in 0..c_out {
            for t2 in 0..r_t * t {
                let (tt, j) = (t2 / r_t, t2 % r_t);
                let src = x.chan(ni, j * c_out + c);
                let dst = out.chan_mut(ni, c);
                dst[t2 * frame..(t2 + 1) * frame]
                    .copy_from_slice(&src[tt * frame..(tt + 1) * frame]);
            }
        }
    }
    Ok(out)
}

/// Exact inverse of `channel_to_time`.
pub fn time_to_channel<S: Scalar>(x: &Tensor5<S>, r_t: usize) -> Result<Tensor5<S>> {
    let [n, c_in, t, h, w] = x.shape();
    if r_t == 0 || t % r_t != 0 {
        return Err(Error::Shape(format!(
            "time_to_channel: {t} frames not divisible by {r_t}"
        )));
    }
    let it = t / r_t;
    let mut out = Tensor5::zeros([n, c_in * r_t, it, h, w])?;
    let frame = h * w;
    for ni in 0..n {
        for q in 0..c_in * r_t {
            let (j, c) = (q / c_in, q % c_in);
            let src = x.chan(ni, c);
            let dst = out.chan_mut(ni, q);
            for tt in 0..it {
                let t2 = tt * r_t + j;
                dst[tt * frame..(tt + 1) * frame]
                    .copy_from_slice(&src[t2 * frame..(t2 + 1) * frame]);
            }
        }
    }
    Ok(out)
}

/// Framewise 2D pixel shuffle,
/// `out[n, c, t, h, w] = x[n, C·r·(w mod r) + C·(h mod r) + c, t, h/r, w/r]`
/// with `C` the output channel count: `(N, r²·C, T, H, W) → (N, C, T, r·H, r·W)`.
pub fn pixel_shuffle_2d_video<S: Scalar>(x: &Tensor5<S>, r_s: usize) -> Result<Tensor5<S>> {
    let [n, c_in, t, h, w] = x.shape();
    let c_out = require_divisible(c_in, r_s * r_s, "pixel_shuffle_2d_video")?;
    let mut out = Tensor5::zeros([n, c_out, t, r_s * h, r_s * w])?;
    let src = x.as_slice();
    let [_, _, _, oh, ow] = out.shape();
    let dst = out.as_mut_slice();
    let mut i = 0;
    for ni in 0..n {
        for c in 0..c_out {
            for tt in 0..t {
                for h2 in 0..oh {
                    let (hh, dh) = (h2 / r_s, h2 % r_s);
                    for w2 in 0..ow {
                        let (ww, dw) = (w2 / r_s, w2 % r_s);
                        let cs = c_out * r_s * dw + c_out * dh + c;
                        dst[i] = src[(((ni * c_in + cs) * t + tt) * h + hh) * w + ww];
                        i += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of `pixel_shuffle_2d_video`.
pub fn pixel_unshuffle_2d_video<S: Scalar>(x: &Tensor5<S>, r_s: usize) -> Result<Tensor5<S>> {
    let [n, c_in, t, h, w] = x.shape();
    if r_s == 0 || h % r_s != 0 || w % r_s != 0 {
        return Err(Error::Shape(format!(
            "pixel_unshuffle_2d_video: extents ({h}, {w}) not divisible by {r_s}"
        )));
    }
    let (ih, iw) = (h / r_s, w / r_s);
    let c_out = c_in * r_s * r_s;
    let mut out = Tensor5::zeros([n, c_out, t, ih, iw])?;
    let src = x.as_slice();
    let dst = out.as_mut_slice();
    let mut i = 0;
    for ni in 0..n {
        for q in 0..c_out {
            let c = q % c_in;
            let dh = (q / c_in) % r_s;
            let dw = q / (c_in * r_s);
            for tt in 0..t {
                for hh in 0..ih {
                    for ww in 0..iw {
                        dst[i] = src[(((ni * c_in + c) * t + tt) * h + hh * r_s + dh) * w
                            + ww * r_s
                            + dw];
                        i += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Decoupled upsampling: semantically
/// `pixel_shuffle_2d_video(channel_to_time(x, r_t), r_s)`, computed in a
/// single fused pass. Output shape equals `pixel_shuffle_3d`'s.
pub fn decoupled_upsample<S: Scalar>(x: &Tensor5<S>, f: UpsampleFactors) -> Result<Tensor5<S>> {
    let [n, c_in, t, h, w] = x.shape();
    let (r_t, r_s) = (f.r_t, f.r_s);
    let c_out = require_divisible(c_in, f.channel_factor(), "decoupled_upsample")?;
    let mut out = Tensor5::zeros([n, c_out, r_t * t, r_s * h, r_s * w])?;
    let src = x.as_slice();
    let [_, _, ot, oh, ow] = out.shape();
    let dst = out.as_mut_slice();
    let cs2 = c_out * r_s * r_s;
    let mut row_at = 0;
    for ni in 0..n {
        for c in 0..c_out {
            for t2 in 0..ot {
                let (tt, j) = (t2 / r_t, t2 % r_t);
                for h2 in 0..oh {
                    let (hh, dh) = (h2 / r_s, h2 % r_s);
                    let dst_row = &mut dst[row_at..row_at + ow];
                    for dw in 0..r_s {
                        let cs = j * cs2 + c_out * r_s * dw + c_out * dh + c;
                        let src_at = (((ni * c_in + cs) * t + tt) * h + hh) * w;
                        let src_row = &src[src_at..src_at + w];
                        for (d, &s) in dst_row.iter_mut().skip(dw).step_by(r_s).zip(src_row) {
                            *d = s;
                        }
                    }
                    row_at += ow;
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of `decoupled_upsample`.
pub fn decoupled_downsample<S: Scalar>(x: &Tensor5<S>, f: UpsampleFactors) -> Result<Tensor5<S>> {
    let a = pixel_unshuffle_2d_video(x, f.r_s)?;
    time_to_channel(&a, f.r_t)
}

/// `(N, C, T, H, W) → (N, C, r_t·T, r_s·H, r_s·W)` by resampling.
/// Nearest replicates; trilinear uses align-corners-false sampling.
pub fn interpolate_3d<S: Scalar>(
    x: &Tensor5<S>,
    f: UpsampleFactors,
    mode: InterpMode,
) -> Result<Tensor5<S>> {
    let [n, c, t, h, w] = x.shape();
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::Shape("interpolate_3d: empty input".into()));
    }
    let (ot, oh, ow) = (t * f.r_t, h * f.r_s, w * f.r_s);
    let mut out = Tensor5::zeros([n, c, ot, oh, ow])?;

    match mode {
        InterpMode::Nearest => {
            for ni in 0..n {
                for ci in 0..c {
                    let src = x.chan(ni, ci);
                    let dst = out.chan_mut(ni, ci);
                    let mut i = 0;
                    for t2 in 0..ot {
                        let tt = t2 / f.r_t;
                        for h2 in 0..oh {
                            let hh = h2 / f.r_s;
                            for w2 in 0..ow {
                                dst[i] = src[(tt * h + hh) * w + w2 / f.r_s];
                                i += 1;
                            }
                        }
                    }
                }
            }
        }
        InterpMode::Trilinear => {
            // Source coordinate (align_corners = false): (i + 0.5)/r - 0.5.
            let axis = |len: usize, r: usize| -> Vec<(usize, usize, f64)> {
                (0..len * r)
                    .map(|i| {
                        let pos = (i as f64 + 0.5) / r as f64 - 0.5;
                        let clamped = pos.clamp(0.0, (len - 1) as f64);
                        let lo = clamped.floor() as usize;
                        let hi = (lo + 1).min(len - 1);
                        (lo, hi, clamped - lo as f64)
                    })
                    .collect()
            };
            let ts = axis(t, f.r_t);
            let hs = axis(h, f.r_s);
            let ws = axis(w, f.r_s);
            for ni in 0..n {
                for ci in 0..c {
                    let src = x.chan(ni, ci);
                    let at = |tt: usize, hh: usize, ww: usize| src[(tt * h + hh) * w + ww].as_f64();
                    let dst = out.chan_mut(ni, ci);
                    let mut i = 0;
                    for &(t0, t1, ft) in &ts {
                        for &(h0, h1, fh) in &hs {
                            for &(w0, w1, fw) in &ws {
                                let c00 = at(t0, h0, w0) * (1.0 - fw) + at(t0, h0, w1) * fw;
                                let c01 = at(t0, h1, w0) * (1.0 - fw) + at(t0, h1, w1) * fw;
                                let c10 = at(t1, h0, w0) * (1.0 - fw) + at(t1, h0, w1) * fw;
                                let c11 = at(t1, h1, w0) * (1.0 - fw) + at(t1, h1, w1) * fw;
                                let c0 = c00 * (1.0 - fh) + c01 * fh;
                                let c1 = c10 * (1.0 - fh) + c11 * fh;
                                dst[i] = S::of_f64(c0 * (1.0 - ft) + c1 * ft);
                                i += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
