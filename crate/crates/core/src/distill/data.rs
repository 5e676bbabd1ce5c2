//! Seeded synthetic videos: translating Gaussian blobs over drifting
//! sinusoidal textures, values in [0, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// The stream cycles this many distinct videos (a tiny fixed dataset).
    pub dataset_size: usize,
}

impl Default for SyntheticDataConfig {
    fn default() -> Self {
        Self { frames: 17, height: 32, width: 32, dataset_size: 8 }
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    sigma: f64,
    amp: [f64; 3],
}

struct Wave {
    kx: f64,
    ky: f64,
    omega: f64,
    phase: f64,
    amp: [f64; 3],
}

fn torus_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().fract();
    d.min(1.0 - d)
}

/// One deterministic video, shape `(1, 3, frames, height, width)`.
pub fn video<S: Scalar>(cfg: &SyntheticDataConfig, seed: u64, index: u64) -> Tensor5<S> {
    let idx = index % cfg.dataset_size as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ idx);
    fn amps(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
        [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
    }
    let blobs: Vec<Blob> = (0..2)
        .map(|_| Blob {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            vx: rng.random_range(-0.03..0.03),
            vy: rng.random_range(-0.03..0.03),
            sigma: rng.random_range(0.08..0.2),
            amp: amps(&mut rng, 0.4, 1.2),
        })
        .collect();
    let waves: Vec<Wave> = (0..2)
        .map(|_| Wave {
            kx: rng.random_range(1.0..3.0),
            ky: rng.random_range(1.0..3.0),
            omega: rng.random_range(-0.4..0.4),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            amp: amps(&mut rng, 0.1, 0.4),
        })
        .collect();

    Tensor5::from_fn([1, 3, cfg.frames, cfg.height, cfg.width], |_, c, t, y, x| {
        let xf = x as f64 / cfg.width as f64;
        let yf = y as f64 / cfg.height as f64;
        let tf = t as f64;
        let mut acc = 0.0;
        for b in &blobs {
            let bx = (b.cx + b.vx * tf).rem_euclid(1.0);
            let by = (b.cy + b.vy * tf).rem_euclid(1.0);
            let dx = torus_dist(xf, bx);
            let dy = torus_dist(yf, by);
            acc += b.amp[c] * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
        }
        for w in &waves {
            acc += w.amp[c]
                * (std::f64::consts::TAU * (w.kx * xf + w.ky * yf) + w.omega * tf + w.phase).sin();
        }
        S::of_f64(0.5 + 0.45 * (0.8 * acc).tanh())
    })
    .expect("synthetic video shape")
}

/// Stack `n` consecutive stream entries starting at `start`.
pub fn batch<S: Scalar>(cfg: &SyntheticDataConfig, seed: u64, start: u64, n: usize) -> Tensor5<S> {
    let mut out = Tensor5::zeros([n, 3, cfg.frames, cfg.height, cfg.width]).expect("batch shape");
    for i in 0..n {
        let v = video::<S>(cfg, seed, start + i as u64);
        for c in 0..3 {
            out.chan_mut(i, c).copy_from_slice(v.chan(0, c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let cfg = SyntheticDataConfig { frames: 5, height: 8, width: 8, dataset_size: 4 };
        let a = video::<f32>(&cfg, 7, 2);
        let b = video::<f32>(&cfg, 7, 2);
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Distinct indices give distinct content; cycling wraps.
        let c = video::<f32>(&cfg, 7, 3);
        assert_ne!(a, c);
        let d = video::<f32>(&cfg, 7, 6);
        assert_eq!(a, d);
    }

    #[test]
    fn frames_actually_move() {
        let cfg = SyntheticDataConfig::default();
        let v = video::<f32>(&cfg, 1, 0);
        let first: Vec<f32> = v.chan(0, 0)[..32 * 32].to_vec();
        let last: Vec<f32> = v.chan(0, 0)[16 * 32 * 32..].to_vec();
        let diff: f32 = first.iter().zip(&last).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1.0, "video is static: {diff}");
    }
}
