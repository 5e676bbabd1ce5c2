//! Frozen synthetic teacher: a fixed random encoder producing latents at the
//! configured compression, plus a wider decoder pre-trained for a short
//! fixed budget on the synthetic task and then frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decoder::config::DecoderConfig;
use crate::decoder::graph::{init_weights, CompiledDecoder, FeatureMap};
use crate::distill::adam::{adam_step, AdamHyper, AdamState};
use crate::distill::data::{batch, SyntheticDataConfig};
use crate::distill::loss::l1_loss;
use crate::error::{Error, Result};
use crate::ops::{conv3d, Conv3dParams, PadSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;
use crate::weights::WeightStore;

/// Latent distribution parameters emitted by the frozen encoder.
pub struct EncoderStats<S> {
    pub mu: Tensor5<S>,
    pub logvar: Tensor5<S>,
}

/// Fixed random conv stack over a pooled video grid. Spatial pooling stops
/// a factor `detail` short of the target grid; the remaining 2D detail is
/// folded into channels by the (bijective) inverse pixel shuffle before the
/// random projections, so the latent keeps recoverable high-frequency
/// content.
struct SynthEncoder<S> {
    mix1: Conv3dParams<S>,
    mix2: Conv3dParams<S>,
    mu_head: Conv3dParams<S>,
    logvar_head: Conv3dParams<S>,
    factors: (usize, usize, usize),
    detail: usize,
}

const ENCODER_MIX_WIDTH: usize = 24;

impl<S: Scalar> SynthEncoder<S> {
    fn new(latent_channels: usize, factors: (usize, usize, usize), seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
        let detail = if factors.1 % 2 == 0 && factors.2 % 2 == 0 { 2 } else { 1 };
        let mut conv = |c_in: usize, c_out: usize, k: usize, gain: f64| -> Result<Conv3dParams<S>> {
            let fan_in = (c_in * k * k * k) as f64;
            let std = gain * (2.0 / fan_in).sqrt();
            let weight = Tensor5::from_fn([c_out, c_in, k, k, k], |_, _, _, _, _| {
                S::of_f64(normal.sample(&mut rng) * std)
            })?;
            Conv3dParams::new(weight, Some(vec![S::zero(); c_out]), PadSpec::same_symmetric((k, k, k)))
        };
        Ok(Self {
            // A linear random code: information-preserving but spatially
            // entangled, so decoding it is a real learning task.
            mix1: conv(3 * detail * detail, ENCODER_MIX_WIDTH, 3, 1.0)?,
            mix2: conv(ENCODER_MIX_WIDTH, ENCODER_MIX_WIDTH, 3, 1.0)?,
            mu_head: conv(ENCODER_MIX_WIDTH, latent_channels, 1, 1.0)?,
            logvar_head: conv(ENCODER_MIX_WIDTH, latent_channels, 1, 0.1)?,
            factors,
            detail,
        })
    }

    /// `(N, 3, T+1, H, W) → (N, 3, T/d_t + 1, H·detail/d_h, W·detail/d_w)`:
    /// the first frame stays, later latent frames average `d_t` source
    /// frames, and space is mean-pooled down to `detail`× the latent grid.
    fn pool(&self, video: &Tensor5<S>) -> Result<Tensor5<S>> {
        let [n, c, frames, h, w] = video.shape();
        let (d_t, d_h, d_w) = self.factors;
        if frames == 0 || (frames - 1) % d_t != 0 || h % d_h != 0 || w % d_w != 0 {
            return Err(Error::Shape(format!(
                "video {frames}x{h}x{w} incompatible with factors {:?}",
                self.factors
            )));
        }
        let (p_h, p_w) = (d_h / self.detail, d_w / self.detail);
        let (lt, lh, lw) = ((frames - 1) / d_t + 1, h / p_h, w / p_w);
        let mut out = Tensor5::zeros([n, c, lt, lh, lw])?;
        let inv_space = S::of_f64(1.0 / (p_h * p_w) as f64);
        for ni in 0..n {
            for ci in 0..c {
                let src = video.chan(ni, ci);
                let dst = out.chan_mut(ni, ci);
                for tl in 0..lt {
                    let (t0, t1) = if tl == 0 { (0, 1) } else { (1 + (tl - 1) * d_t, 1 + tl * d_t) };
                    let inv = inv_space * S::of_f64(1.0 / (t1 - t0) as f64);
                    for hl in 0..lh {
                        for wl in 0..lw {
                            let mut acc = S::zero();
                            for t in t0..t1 {
                                for dh in 0..p_h {
                                    for dw in 0..p_w {
                                        acc += src[(t * h + hl * p_h + dh) * w + wl * p_w + dw];
                                    }
                                }
                            }
                            dst[(tl * lh + hl) * lw + wl] = acc * inv;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn encode(&self, video: &Tensor5<S>) -> Result<EncoderStats<S>> {
        let pooled = self.pool(video)?;
        let folded = crate::upsample::pixel_unshuffle_2d_video(&pooled, self.detail)?;
        let mixed = conv3d(&conv3d(&folded, &self.mix1)?, &self.mix2)?;
        Ok(EncoderStats {
            mu: conv3d(&mixed, &self.mu_head)?,
            logvar: conv3d(&mixed, &self.logvar_head)?,
        })
    }
}

/// Frozen teacher pair. Parameters never change after construction.
pub struct ToyTeacher<S> {
    encoder: SynthEncoder<S>,
    cfg: DecoderConfig,
    weights: WeightStore<S>,
    compiled: CompiledDecoder<S>,
}

impl<S: Scalar> ToyTeacher<S> {
    /// Build the teacher: fixed random encoder, decoder initialized from
    /// `seed` and pre-trained with plain L1 for `pretrain_steps`, then frozen.
    pub fn build(
        cfg: &DecoderConfig,
        data: &SyntheticDataConfig,
        seed: u64,
        pretrain_steps: u64,
        pretrain_lr: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let encoder = SynthEncoder::new(cfg.latent_channels, cfg.factors, seed ^ 0x656e_6373)?;
        let mut weights = init_weights::<S>(cfg, seed ^ 0x7465_6163)?;
        let hyper = AdamHyper { lr: pretrain_lr, ..Default::default() };
        let mut state = AdamState::new();
        let batch_size = 2usize;
        for step in 0..pretrain_steps {
            let videos = batch::<S>(data, seed, step * batch_size as u64, batch_size);
            let stats = encoder.encode(&videos)?;
            let compiled = CompiledDecoder::build(cfg, &weights)?;
            let (recon, _feats, tape) = compiled.forward_with_tape(&stats.mu)?;
            let (l1, d_recon) = l1_loss(&videos, &recon)?;
            if !l1.is_finite() {
                return Err(Error::Divergence { step, loss: l1 });
            }
            let grads = compiled.backward(&tape, &d_recon, &FeatureMap::new())?;
            adam_step(&mut weights, &grads, &mut state, &hyper)?;
        }
        let compiled = CompiledDecoder::build(cfg, &weights)?;
        Ok(Self { encoder, cfg: cfg.clone(), weights, compiled })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &WeightStore<S> {
        &self.weights
    }

    pub fn encode(&self, video: &Tensor5<S>) -> Result<EncoderStats<S>> {
        self.encoder.encode(video)
    }

    /// Frozen decode with exported per-block features.
    pub fn decode(&self, latent: &Tensor5<S>) -> Result<(Tensor5<S>, FeatureMap<S>)> {
        self.compiled.forward(latent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::config::tiny_config;
    use crate::distill::data;

    #[test]
    fn encoder_shapes_and_determinism() {
        let cfg = tiny_config(4, &[8, 8], &[(2, 2)], 2);
        let data_cfg = SyntheticDataConfig { frames: 5, height: 8, width: 8, dataset_size: 4 };
        let teacher = ToyTeacher::<f32>::build(&cfg, &data_cfg, 11, 0, 1e-3).unwrap();
        let v = data::batch::<f32>(&data_cfg, 11, 0, 2);
        let stats = teacher.encode(&v).unwrap();
        // d_t = 2, d_s = 2: (2, 4, (5-1)/2+1, 4, 4).
        assert_eq!(stats.mu.shape(), [2, 4, 3, 4, 4]);
        assert_eq!(stats.logvar.shape(), [2, 4, 3, 4, 4]);
        let again = teacher.encode(&v).unwrap();
        assert_eq!(stats.mu, again.mu);
        let (video, feats) = teacher.decode(&stats.mu).unwrap();
        assert_eq!(video.shape(), [2, 3, 5, 8, 8]);
        assert_eq!(feats.len(), 3);
    }

    #[test]
    fn pretraining_improves_reconstruction() {
        let cfg = tiny_config(4, &[8, 8], &[(2, 2)], 2);
        let data_cfg = SyntheticDataConfig { frames: 5, height: 8, width: 8, dataset_size: 4 };
        let fresh = ToyTeacher::<f32>::build(&cfg, &data_cfg, 5, 0, 3e-3).unwrap();
        let trained = ToyTeacher::<f32>::build(&cfg, &data_cfg, 5, 60, 3e-3).unwrap();
        let v = data::batch::<f32>(&data_cfg, 5, 0, 2);
        let loss_of = |t: &ToyTeacher<f32>| {
            let stats = t.encode(&v).unwrap();
            let (recon, _) = t.decode(&stats.mu).unwrap();
            l1_loss(&v, &recon).unwrap().0
        };
        let (before, after) = (loss_of(&fresh), loss_of(&trained));
        assert!(after < before, "pretraining did not help: {after} !< {before}");
    }
}
