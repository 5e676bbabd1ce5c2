//! Reconstruction-quality metrics: PSNR and SSIM over videos.
//!
//! Values are clamped to `[0, max_val]` before comparison and all statistics
//! are computed in f64. Per-frame series are aggregated by arithmetic mean
//! over frames, then batch.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;

/// PSNR with the zero-MSE case kept distinguishable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsnrValue {
    /// MSE was exactly zero.
    Identical,
    Db { db: f64 },
}

impl PsnrValue {
    fn from_mse(mse: f64, max_val: f64) -> Self {
        if mse == 0.0 {
            PsnrValue::Identical
        } else {
            PsnrValue::Db { db: 10.0 * (max_val * max_val / mse).log10() }
        }
    }

    pub fn as_db(&self) -> f64 {
        match self {
            PsnrValue::Identical => f64::INFINITY,
            PsnrValue::Db { db } => *db,
        }
    }
}

impl std::fmt::Display for PsnrValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PsnrValue::Identical => write!(f, "identical"),
            PsnrValue::Db { db } => write!(f, "{db:.4} dB"),
        }
    }
}

fn check_pair<S: Scalar>(a: &Tensor5<S>, b: &Tensor5<S>, max_val: f64) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "metric operands differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(max_val > 0.0) {
        return Err(Error::Domain(format!("max_val must be positive, got {max_val}")));
    }
    Ok(())
}

#[inline]
fn clamped<S: Scalar>(v: S, max_val: f64) -> f64 {
    v.as_f64().clamp(0.0, max_val)
}

/// `10·log10(max_val² / MSE)` over every element.
pub fn psnr<S: Scalar>(a: &Tensor5<S>, b: &Tensor5<S>, max_val: f64) -> Result<PsnrValue> {
    check_pair(a, b, max_val)?;
    if a.numel() == 0 {
        return Err(Error::Domain("psnr of empty tensors".into()));
    }
    let mut se = 0.0f64;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let d = clamped(x, max_val) - clamped(y, max_val);
        se += d * d;
    }
    Ok(PsnrValue::from_mse(se / a.numel() as f64, max_val))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW - 1) as f64 / 2.0;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-mode Gaussian filter of an `h x w` plane.
fn gauss_filter(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // Rows first.
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in win.iter().enumerate() {
                acc += g * plane[y * w + x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in win.iter().enumerate() {
                acc += g * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Windowed SSIM of one plane pair (means already clamped to `[0, max_val]`).
fn plane_ssim(x: &[f64], y: &[f64], h: usize, w: usize, max_val: f64) -> f64 {
    let win = gaussian_window();
    let c1 = (SSIM_K1 * max_val) * (SSIM_K1 * max_val);
    let c2 = (SSIM_K2 * max_val) * (SSIM_K2 * max_val);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = gauss_filter(x, h, w, &win);
    let mu_y = gauss_filter(y, h, w, &win);
    let e_xx = gauss_filter(&xx, h, w, &win);
    let e_yy = gauss_filter(&yy, h, w, &win);
    let e_xy = gauss_filter(&xy, h, w, &win);
    let mut sum = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sx = e_xx[i] - mx * mx;
        let sy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sx + sy + c2);
        sum += num / den;
    }
    sum / mu_x.len() as f64
}

/// Mean over frames and channels of windowed SSIM
/// (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03).
pub fn ssim<S: Scalar>(a: &Tensor5<S>, b: &Tensor5<S>, max_val: f64) -> Result<f64> {
    Ok(mean(&per_frame_ssim(a, b, max_val)?))
}

fn per_frame_ssim<S: Scalar>(a: &Tensor5<S>, b: &Tensor5<S>, max_val: f64) -> Result<Vec<f64>> {
    check_pair(a, b, max_val)?;
    let [n, c, t, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    if n == 0 || c == 0 || t == 0 {
        return Err(Error::Domain("ssim of empty tensors".into()));
    }
    let frame = h * w;
    let mut series = Vec::with_capacity(n * t);
    for ni in 0..n {
        for ti in 0..t {
            let mut acc = 0.0;
            for ci in 0..c {
                let pa: Vec<f64> = a.chan(ni, ci)[ti * frame..(ti + 1) * frame]
                    .iter()
                    .map(|&v| clamped(v, max_val))
                    .collect();
                let pb: Vec<f64> = b.chan(ni, ci)[ti * frame..(ti + 1) * frame]
                    .iter()
                    .map(|&v| clamped(v, max_val))
                    .collect();
                acc += plane_ssim(&pa, &pb, h, w, max_val);
            }
            series.push(acc / c as f64);
        }
    }
    Ok(series)
}

fn per_frame_psnr<S: Scalar>(a: &Tensor5<S>, b: &Tensor5<S>, max_val: f64) -> Result<Vec<PsnrValue>> {
    check_pair(a, b, max_val)?;
    let [n, c, t, h, w] = a.shape();
    if n * c * t * h * w == 0 {
        return Err(Error::Domain("psnr of empty tensors".into()));
    }
    let frame = h * w;
    let mut series = Vec::with_capacity(n * t);
    for ni in 0..n {
        for ti in 0..t {
            let mut se = 0.0f64;
            for ci in 0..c {
                let pa = &a.chan(ni, ci)[ti * frame..(ti + 1) * frame];
                let pb = &b.chan(ni, ci)[ti * frame..(ti + 1) * frame];
                for (&x, &y) in pa.iter().zip(pb) {
                    let d = clamped(x, max_val) - clamped(y, max_val);
                    se += d * d;
                }
            }
            series.push(PsnrValue::from_mse(se / (c * frame) as f64, max_val));
        }
    }
    Ok(series)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-frame series plus their means.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub psnr: PsnrValue,
    pub ssim: f64,
    pub per_frame_psnr: Vec<PsnrValue>,
    pub per_frame_ssim: Vec<f64>,
}

impl MetricReport {
    pub fn compute<S: Scalar>(a: &Tensor5<S>, b: &Tensor5<S>, max_val: f64) -> Result<Self> {
        let per_frame_psnr = per_frame_psnr(a, b, max_val)?;
        let per_frame_ssim = per_frame_ssim(a, b, max_val)?;
        let db = mean(&per_frame_psnr.iter().map(|p| p.as_db()).collect::<Vec<_>>());
        let psnr = if db.is_infinite() { PsnrValue::Identical } else { PsnrValue::Db { db } };
        let ssim = mean(&per_frame_ssim);
        Ok(Self { psnr, ssim, per_frame_psnr, per_frame_ssim })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: crate::Shape5, seed: u64, lo: f64, hi: f64) -> Tensor5<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor5::from_fn(shape, |_, _, _, _, _| rng.random_range(lo..hi)).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let a = rand_tensor([1, 3, 2, 16, 16], 1, 0.0, 1.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PsnrValue::Identical);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn offset_closed_forms() {
        let a = rand_tensor([1, 2, 2, 4, 4], 2, 0.0, 0.9);
        let b = a.map(|v| v + 0.1);
        match psnr(&a, &b, 1.0).unwrap() {
            PsnrValue::Db { db } => assert!((db - 20.0).abs() < 1e-9, "got {db}"),
            _ => panic!("expected finite"),
        }
        // Unit offset within range: 0 vs 1 everywhere -> 0 dB.
        let z = Tensor5::full([1, 1, 1, 2, 2], 0.0f64).unwrap();
        let o = Tensor5::full([1, 1, 1, 2, 2], 1.0f64).unwrap();
        match psnr(&z, &o, 1.0).unwrap() {
            PsnrValue::Db { db } => assert!(db.abs() < 1e-12),
            _ => panic!("expected finite"),
        }
    }

    #[test]
    fn symmetry() {
        let a = rand_tensor([1, 2, 2, 16, 16], 3, 0.0, 1.0);
        let b = rand_tensor([1, 2, 2, 16, 16], 4, 0.0, 1.0);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn constant_image_ssim_closed_form() {
        let a = Tensor5::full([1, 1, 1, 16, 16], 0.0f64).unwrap();
        let b = Tensor5::full([1, 1, 1, 16, 16], 1.0f64).unwrap();
        let got = ssim(&a, &b, 1.0).unwrap();
        // mu_x = 0, mu_y = 1, all (co)variances 0:
        // (C1 * C2) / ((1 + C1) * C2) = C1 / (1 + C1).
        let c1 = 1e-4;
        let expected = c1 / (1.0 + c1);
        assert!((got - expected).abs() < 1e-9, "got {got}, expected {expected}");
    }

    #[test]
    fn psnr_monotone_in_noise() {
        let a = rand_tensor([1, 1, 2, 12, 12], 5, 0.2, 0.8);
        let noise = rand_tensor([1, 1, 2, 12, 12], 6, -0.1, 0.1);
        let mut last = f64::INFINITY;
        for amp in [0.25, 0.5, 1.0, 2.0] {
            let b = a.add(&noise.scale(amp)).unwrap();
            let db = psnr(&a, &b, 1.0).unwrap().as_db();
            assert!(db < last, "amp {amp}: {db} !< {last}");
            last = db;
        }
    }

    #[test]
    fn window_too_large() {
        let a = Tensor5::full([1, 1, 1, 8, 8], 0.5f64).unwrap();
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn report_aggregates_per_frame_means() {
        let a = rand_tensor([2, 2, 3, 16, 16], 7, 0.0, 0.9);
        let b = a.map(|v| v + 0.05);
        let r = MetricReport::compute(&a, &b, 1.0).unwrap();
        assert_eq!(r.per_frame_psnr.len(), 6);
        assert_eq!(r.per_frame_ssim.len(), 6);
        let m = r.per_frame_psnr.iter().map(|p| p.as_db()).sum::<f64>() / 6.0;
        assert!((r.psnr.as_db() - m).abs() < 1e-12);
        let s = r.per_frame_ssim.iter().sum::<f64>() / 6.0;
        assert!((r.ssim - s).abs() < 1e-12);
    }

    use crate::error::Error;
}
