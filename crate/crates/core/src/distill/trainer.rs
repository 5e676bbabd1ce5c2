//! Deterministic toy trainer: Adam over student + projection-head weights,
//! per-step loss breakdown and held-out eval PSNR, CSV logging, and the
//! paired convergence experiment (with vs without the alignment loss).

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::decoder::config::DecoderConfig;
use crate::decoder::graph::{init_weights, CompiledDecoder};
use crate::distill::adam::{adam_step, AdamHyper, AdamState};
use crate::distill::data::{batch, SyntheticDataConfig};
use crate::distill::heads::{init_head_weights, ProjectionHead};
use crate::distill::loss::{distill_loss, kl_gaussian, total_loss, LossWeights, PerceptualHook};
use crate::distill::teacher::ToyTeacher;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::scalar::Scalar;
use crate::weights::WeightStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Blocks whose features are aligned (subset of the student block names).
    pub align_blocks: Vec<String>,
    pub weights: LossWeights,
    pub lr: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Step at which the adversarial hook joins (stage 2); `None` = never.
    pub stage_two_step: Option<u64>,
    pub data: SyntheticDataConfig,
    /// Held-out videos used for the per-step eval PSNR.
    pub eval_videos: usize,
    /// Teacher pre-training budget (plain L1 steps before freezing).
    pub teacher_pretrain_steps: u64,
    pub teacher_pretrain_lr: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            align_blocks: vec!["mid".into(), "up_0".into(), "up_1".into()],
            weights: LossWeights::default(),
            lr: 2e-4,
            betas: (0.9, 0.95),
            batch_size: 2,
            steps: 200,
            seed: 0,
            stage_two_step: None,
            data: SyntheticDataConfig::default(),
            eval_videos: 1,
            teacher_pretrain_steps: 200,
            teacher_pretrain_lr: 3e-3,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.align_blocks.is_empty() {
            return Err(Error::Config("align_blocks must be nonempty".into()));
        }
        let w = &self.weights;
        if w.alpha_lpips < 0.0 || w.alpha_distill < 0.0 || w.alpha_kl < 0.0 || w.alpha_adv < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub l1: f64,
    pub distill: f64,
    pub kl: f64,
    pub total: f64,
    pub eval_psnr: f64,
}

pub struct TrainOutcome<S> {
    pub log: Vec<LogRow>,
    /// Student weights plus `proj/…` head weights.
    pub weights: WeightStore<S>,
}

impl<S: Scalar> TrainOutcome<S> {
    /// Deployment view: the student decoder only, heads discarded.
    pub fn student_weights(&self) -> WeightStore<S> {
        let mut out = WeightStore::new();
        for (name, e) in self.weights.iter() {
            if !name.starts_with("proj/") {
                out.insert(name, e.clone()).expect("unique names");
            }
        }
        out
    }
}

/// Optional loss hooks (both default off).
#[derive(Default)]
pub struct Hooks<'a, S: Scalar> {
    pub lpips: Option<&'a dyn PerceptualHook<S>>,
    pub adv: Option<&'a dyn PerceptualHook<S>>,
}

/// Run toy distillation of `student_cfg` against a frozen teacher.
///
/// Fully deterministic given `cfg.seed`: fixed init, fixed data order.
/// Teacher parameters are never touched.
pub fn train_toy<S: Scalar>(
    cfg: &DistillConfig,
    student_cfg: &DecoderConfig,
    teacher: &ToyTeacher<S>,
    hooks: Hooks<'_, S>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    student_cfg.validate()?;

    // Trainable store: student decoder + projection heads.
    let mut trainable = init_weights::<S>(student_cfg, cfg.seed)?;
    let student_names = student_cfg.block_names();
    let teacher_names = teacher.config().block_names();
    let mut align = Vec::new();
    for block in &cfg.align_blocks {
        let si = student_names
            .iter()
            .position(|n| n == block)
            .ok_or_else(|| Error::Config(format!("align block {block:?} not in student")))?;
        let ti = teacher_names
            .iter()
            .position(|n| n == block)
            .ok_or_else(|| Error::Config(format!("align block {block:?} not in teacher")))?;
        align.push((
            block.clone(),
            student_cfg.block_width(si),
            teacher.config().block_width(ti),
        ));
    }
    init_head_weights(&mut trainable, &align, cfg.seed ^ 0x6865_6164)?;

    let hyper = AdamHyper {
        lr: cfg.lr,
        beta1: cfg.betas.0,
        beta2: cfg.betas.1,
        ..Default::default()
    };
    let mut state = AdamState::new();
    let mut log = Vec::with_capacity(cfg.steps as usize);

    // Held-out eval set lives under a different stream seed.
    let eval_seed = cfg.seed ^ 0x6576_616c;
    let eval_videos = batch::<S>(&cfg.data, eval_seed, 0, cfg.eval_videos.max(1));
    let eval_latent = teacher.encode(&eval_videos)?.mu;

    for step in 0..cfg.steps {
        let videos = batch::<S>(&cfg.data, cfg.seed, step * cfg.batch_size as u64, cfg.batch_size);
        let stats = teacher.encode(&videos)?;
        let (_, teacher_feats) = teacher.decode(&stats.mu)?;

        let compiled = CompiledDecoder::build(student_cfg, &trainable)?;
        let (recon, student_feats, tape) = compiled.forward_with_tape(&stats.mu)?;

        let heads: Vec<ProjectionHead<S>> = cfg
            .align_blocks
            .iter()
            .map(|b| ProjectionHead::build(b, &trainable))
            .collect::<Result<_>>()?;
        let mut head_grads = WeightStore::new();
        let (distill, feat_grads) =
            distill_loss(&student_feats, &teacher_feats, &heads, &mut head_grads)?;
        let kl = kl_gaussian(&stats.mu, &stats.logvar)?;

        let adv_active = cfg.stage_two_step.is_some_and(|s| step >= s);
        let (breakdown, d_recon) = total_loss(
            &videos,
            &recon,
            kl,
            distill,
            &cfg.weights,
            hooks.lpips,
            hooks.adv,
            adv_active,
        )?;
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence { step, loss: breakdown.total });
        }

        // Alignment gradients enter the decoder backward scaled by alpha.
        let a2 = S::of_f64(cfg.weights.alpha_distill);
        let mut scaled_feat_grads = crate::decoder::graph::FeatureMap::new();
        for (k, g) in &feat_grads {
            scaled_feat_grads.insert(k.clone(), g.scale(a2));
        }
        let mut grads = compiled.backward(&tape, &d_recon, &scaled_feat_grads)?;
        for (name, e) in head_grads.iter() {
            let mut e = e.clone();
            for v in &mut e.data {
                *v = *v * a2;
            }
            grads.insert(name, e)?;
        }

        adam_step(&mut trainable, &grads, &mut state, &hyper)?;

        // Eval on the held-out batch with post-update weights.
        let eval_dec = CompiledDecoder::build(student_cfg, &trainable)?;
        let (eval_recon, _) = eval_dec.forward(&eval_latent)?;
        let eval_psnr = psnr(&eval_videos, &eval_recon, 1.0)?.as_db();

        log.push(LogRow {
            step: step + 1,
            l1: breakdown.l1,
            distill: breakdown.distill,
            kl: breakdown.kl,
            total: breakdown.total,
            eval_psnr,
        });
    }

    Ok(TrainOutcome { log, weights: trainable })
}

/// CSV with the columns `step,l1,l_distill,l_kl,total,eval_psnr`.
pub fn write_log_csv(log: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "step,l1,l_distill,l_kl,total,eval_psnr")?;
    for r in log {
        writeln!(
            f,
            "{},{:.9},{:.9},{:.9},{:.9},{:.6}",
            r.step, r.l1, r.distill, r.kl, r.total, r.eval_psnr
        )?;
    }
    Ok(())
}

/// Outcome of one paired run (same seed, alignment loss on vs off).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvergencePair {
    /// Reconstruction threshold: the baseline run's final L1.
    pub tau: f64,
    pub baseline_steps_to_tau: u64,
    pub distilled_steps_to_tau: Option<u64>,
    pub baseline_final_psnr: f64,
    pub distilled_final_psnr: f64,
}

fn steps_to_threshold(log: &[LogRow], tau: f64) -> Option<u64> {
    log.iter().find(|r| r.l1 <= tau).map(|r| r.step)
}

/// Train twice from identical init and data order — once with the alignment
/// loss off (baseline), once on — and report steps-to-threshold where the
/// threshold is the baseline's final reconstruction loss.
pub fn paired_convergence<S: Scalar>(
    cfg: &DistillConfig,
    student_cfg: &DecoderConfig,
    teacher: &ToyTeacher<S>,
) -> Result<ConvergencePair> {
    let mut base_cfg = cfg.clone();
    base_cfg.weights.alpha_distill = 0.0;
    let baseline = train_toy(&base_cfg, student_cfg, teacher, Hooks::default())?;
    let distilled = train_toy(cfg, student_cfg, teacher, Hooks::default())?;
    let tau = baseline.log.last().map(|r| r.l1).ok_or_else(|| {
        Error::Config("convergence experiment needs at least one step".into())
    })?;
    Ok(ConvergencePair {
        tau,
        baseline_steps_to_tau: steps_to_threshold(&baseline.log, tau)
            .expect("baseline reaches its own final loss"),
        distilled_steps_to_tau: steps_to_threshold(&distilled.log, tau),
        baseline_final_psnr: baseline.log.last().map(|r| r.eval_psnr).unwrap_or(0.0),
        distilled_final_psnr: distilled.log.last().map(|r| r.eval_psnr).unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::config::tiny_config;

    fn tiny_setup() -> (DistillConfig, DecoderConfig, ToyTeacher<f32>) {
        let data = SyntheticDataConfig { frames: 5, height: 8, width: 8, dataset_size: 4 };
        let student = tiny_config(4, &[8, 8], &[(2, 2)], 2);
        let teacher_cfg = tiny_config(4, &[16, 16], &[(2, 2)], 2);
        let teacher = ToyTeacher::build(&teacher_cfg, &data, 3, 30, 3e-3).unwrap();
        let cfg = DistillConfig {
            align_blocks: vec!["mid".into(), "up_0".into()],
            data,
            steps: 5,
            batch_size: 2,
            lr: 1e-3,
            seed: 9,
            teacher_pretrain_steps: 30,
            ..Default::default()
        };
        (cfg, student, teacher)
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let (mut cfg, student, teacher) = tiny_setup();
        cfg.steps = 0;
        let out = train_toy(&cfg, &student, &teacher, Hooks::default()).unwrap();
        assert!(out.log.is_empty());
        let fresh = init_weights::<f32>(&student, cfg.seed).unwrap();
        for (name, e) in fresh.iter() {
            assert_eq!(out.weights.get(name).unwrap().data, e.data);
        }
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let (mut cfg, student, teacher) = tiny_setup();
        cfg.lr = 0.0;
        cfg.steps = 4;
        cfg.batch_size = cfg.data.dataset_size; // every step sees the same batch
        let out = train_toy(&cfg, &student, &teacher, Hooks::default()).unwrap();
        let first = out.log[0].total;
        for r in &out.log {
            assert_eq!(r.total, first);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (cfg, student, teacher) = tiny_setup();
        let a = train_toy(&cfg, &student, &teacher, Hooks::default()).unwrap();
        let b = train_toy(&cfg, &student, &teacher, Hooks::default()).unwrap();
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.total, rb.total);
            assert_eq!(ra.eval_psnr, rb.eval_psnr);
        }
        for (name, e) in a.weights.iter() {
            assert_eq!(e.data, b.weights.get(name).unwrap().data, "{name}");
        }
    }

    #[test]
    fn teacher_is_bitwise_frozen() {
        let (cfg, student, teacher) = tiny_setup();
        let before: Vec<(String, Vec<f32>)> = teacher
            .weights()
            .iter()
            .map(|(n, e)| (n.to_string(), e.data.clone()))
            .collect();
        train_toy(&cfg, &student, &teacher, Hooks::default()).unwrap();
        for (name, data) in before {
            let after = &teacher.weights().get(&name).unwrap().data;
            assert!(data.iter().zip(after.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn alpha_zero_degenerates_to_plain_l1_training() {
        let (mut cfg, student, teacher) = tiny_setup();
        cfg.steps = 3;
        cfg.weights.alpha_distill = 0.0;
        let out = train_toy(&cfg, &student, &teacher, Hooks::default()).unwrap();
        for r in &out.log {
            let expected = r.l1 + cfg.weights.alpha_kl * r.kl;
            assert!((r.total - expected).abs() < 1e-12);
        }
        // Head weights saw zero gradients and must be untouched.
        let mut fresh = WeightStore::<f32>::new();
        init_head_weights(
            &mut fresh,
            &[("mid".into(), 8, 16), ("up_0".into(), 8, 16)],
            cfg.seed ^ 0x6865_6164,
        )
        .unwrap();
        for (name, e) in fresh.iter() {
            assert_eq!(out.weights.get(name).unwrap().data, e.data, "{name}");
        }
    }

    #[test]
    fn divergence_aborts_with_diagnostic() {
        let (mut cfg, student, teacher) = tiny_setup();
        cfg.steps = 2;
        // Poison the data path is impossible (generator is bounded), so force
        // divergence through an absurd learning rate is also bounded by the
        // norm layers; instead poison via a hook that returns NaN.
        struct NanHook;
        impl PerceptualHook<f32> for NanHook {
            fn loss_grad(
                &self,
                _t: &crate::Tensor5<f32>,
                r: &crate::Tensor5<f32>,
            ) -> crate::Result<(f64, crate::Tensor5<f32>)> {
                Ok((f64::NAN, r.zeros_like()))
            }
        }
        let hooks = Hooks { lpips: Some(&NanHook), adv: None };
        let err = train_toy(&cfg, &student, &teacher, hooks);
        assert!(matches!(err, Err(Error::Divergence { step: 0, .. })));
    }

    #[test]
    fn student_weights_drop_heads() {
        let (cfg, student, teacher) = tiny_setup();
        let out = train_toy(&cfg, &student, &teacher, Hooks::default()).unwrap();
        let deploy = out.student_weights();
        assert!(deploy.names().all(|n| !n.starts_with("proj/")));
        assert!(out.weights.names().any(|n| n.starts_with("proj/")));
        // Deployment store loads cleanly.
        CompiledDecoder::build(&student, &deploy).unwrap();
    }
}
