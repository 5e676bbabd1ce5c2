//! Training losses: L1 reconstruction, feature-alignment distillation,
//! Gaussian KL, and the weighted composite with optional perceptual /
//! adversarial hooks.

use serde::{Deserialize, Serialize};

use crate::decoder::graph::FeatureMap;
use crate::distill::heads::ProjectionHead;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;
use crate::weights::WeightStore;

/// Weights of the composite loss
/// `L = L1 + a_lpips·L_lpips + a_distill·L_distill + a_kl·L_kl + a_adv·L_adv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_lpips: f64,
    pub alpha_distill: f64,
    pub alpha_kl: f64,
    pub alpha_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_lpips: 1.0, alpha_distill: 1.0, alpha_kl: 1e-7, alpha_adv: 0.05 }
    }
}

/// Per-component values for logging.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub lpips: f64,
    pub distill: f64,
    pub kl: f64,
    pub adv: f64,
    pub total: f64,
}

/// Pluggable perceptual/adversarial term. No implementation ships; the hook
/// contributes only when installed.
pub trait PerceptualHook<S: Scalar>: Send + Sync {
    /// Returns the loss value and its gradient with respect to `recon`.
    fn loss_grad(&self, target: &Tensor5<S>, recon: &Tensor5<S>) -> Result<(f64, Tensor5<S>)>;
}

/// Mean absolute error and its gradient with respect to `recon`.
pub fn l1_loss<S: Scalar>(target: &Tensor5<S>, recon: &Tensor5<S>) -> Result<(f64, Tensor5<S>)> {
    if target.shape() != recon.shape() {
        return Err(Error::Shape(format!(
            "l1 operands differ: {:?} vs {:?}",
            target.shape(),
            recon.shape()
        )));
    }
    let n = recon.numel();
    if n == 0 {
        return Err(Error::Domain("l1 of empty tensors".into()));
    }
    let inv = S::of_f64(1.0 / n as f64);
    let mut acc = 0.0f64;
    let grad = recon.zip_map(target, |r, t| {
        let d = r - t;
        acc += d.abs().as_f64();
        if d > S::zero() {
            inv
        } else if d < S::zero() {
            -inv
        } else {
            S::zero()
        }
    })?;
    Ok((acc / n as f64, grad))
}

/// Mean per-element KL of `N(mu, exp(logvar))` against the standard normal:
/// `½·(mu² + exp(logvar) − 1 − logvar)`.
pub fn kl_gaussian<S: Scalar>(mu: &Tensor5<S>, logvar: &Tensor5<S>) -> Result<f64> {
    if mu.shape() != logvar.shape() {
        return Err(Error::Shape("kl operands differ".into()));
    }
    if mu.numel() == 0 {
        return Err(Error::Domain("kl of empty tensors".into()));
    }
    let mut acc = 0.0f64;
    for (&m, &lv) in mu.as_slice().iter().zip(logvar.as_slice()) {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        acc += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    Ok(acc / mu.numel() as f64)
}

/// Feature-alignment loss: sum over aligned blocks of the mean absolute
/// difference between projected student features and teacher features.
///
/// Returns the (unweighted) loss, the gradient with respect to each aligned
/// student feature, and head parameter gradients accumulated into `grads`.
/// Gradients never flow to teacher features.
pub fn distill_loss<S: Scalar>(
    student_feats: &FeatureMap<S>,
    teacher_feats: &FeatureMap<S>,
    heads: &[ProjectionHead<S>],
    grads: &mut WeightStore<S>,
) -> Result<(f64, FeatureMap<S>)> {
    let mut total = 0.0f64;
    let mut feat_grads = FeatureMap::new();
    for head in heads {
        let block = head.block();
        let f_s = student_feats
            .get(block)
            .ok_or_else(|| Error::Config(format!("student features missing block {block:?}")))?;
        let f_t = teacher_feats
            .get(block)
            .ok_or_else(|| Error::Config(format!("teacher features missing block {block:?}")))?;
        let z = head.forward(f_s)?;
        if z.shape() != f_t.shape() {
            return Err(Error::Shape(format!(
                "projected student feature {:?} does not match teacher {:?} at block {block}",
                z.shape(),
                f_t.shape()
            )));
        }
        let (l, dz) = l1_loss(f_t, &z)?;
        total += l;
        let d_fs = head.backward(f_s, &dz, grads)?;
        feat_grads.insert(block.to_string(), d_fs);
    }
    Ok((total, feat_grads))
}

/// Composite loss assembly. `distill` is the unweighted alignment loss (with
/// its gradients scaled by `alpha_distill` at the caller); hooks contribute
/// only when installed, and the adversarial hook only when `adv_active`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<S: Scalar>(
    target: &Tensor5<S>,
    recon: &Tensor5<S>,
    kl: f64,
    distill: f64,
    weights: &LossWeights,
    lpips_hook: Option<&dyn PerceptualHook<S>>,
    adv_hook: Option<&dyn PerceptualHook<S>>,
    adv_active: bool,
) -> Result<(LossBreakdown, Tensor5<S>)> {
    let (l1, mut d_recon) = l1_loss(target, recon)?;
    let mut breakdown = LossBreakdown { l1, kl, distill, ..Default::default() };
    if let Some(hook) = lpips_hook {
        let (v, g) = hook.loss_grad(target, recon)?;
        breakdown.lpips = v;
        d_recon.add_assign(&g.scale(S::of_f64(weights.alpha_lpips)))?;
    }
    if adv_active {
        if let Some(hook) = adv_hook {
            let (v, g) = hook.loss_grad(target, recon)?;
            breakdown.adv = v;
            d_recon.add_assign(&g.scale(S::of_f64(weights.alpha_adv)))?;
        }
    }
    breakdown.total = breakdown.l1
        + weights.alpha_lpips * breakdown.lpips
        + weights.alpha_distill * breakdown.distill
        + weights.alpha_kl * breakdown.kl
        + weights.alpha_adv * breakdown.adv;
    Ok((breakdown, d_recon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::heads::{head_weight_spec, init_head_weights};
    use crate::weights::NamedTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l1_values_and_grad_signs() {
        let t = Tensor5::from_vec([1, 1, 1, 1, 4], vec![0.0f64, 0.0, 1.0, 1.0]).unwrap();
        let r = Tensor5::from_vec([1, 1, 1, 1, 4], vec![0.5f64, -0.5, 1.0, 2.0]).unwrap();
        let (l, g) = l1_loss(&t, &r).unwrap();
        assert!((l - 0.5).abs() < 1e-12);
        assert_eq!(g.as_slice(), &[0.25, -0.25, 0.0, 0.25]);
    }

    #[test]
    fn kl_closed_forms() {
        let mu = Tensor5::full([1, 1, 1, 1, 1], 1.0f64).unwrap();
        let lv = Tensor5::full([1, 1, 1, 1, 1], 0.0f64).unwrap();
        assert!((kl_gaussian(&mu, &lv).unwrap() - 0.5).abs() < 1e-12);
        let mu0 = Tensor5::full([1, 2, 1, 1, 3], 0.0f64).unwrap();
        let lv0 = Tensor5::full([1, 2, 1, 1, 3], 0.0f64).unwrap();
        assert_eq!(kl_gaussian(&mu0, &lv0).unwrap(), 0.0);
    }

    fn identity_head_store(c: usize) -> WeightStore<f64> {
        // conv1 scaled so that silu's positive branch stays near-linear is
        // not possible exactly; tests that need exact zero use equal feats.
        let mut store = WeightStore::new();
        for (name, dims) in head_weight_spec("mid", c, c) {
            let n: usize = dims.iter().product();
            let mut data = vec![0.0f64; n];
            if name.ends_with("/weight") {
                for i in 0..c {
                    data[i * c + i] = 1.0;
                }
            }
            store.insert(&name, NamedTensor::new(dims, data).unwrap()).unwrap();
        }
        store
    }

    #[test]
    fn distill_zero_when_projection_matches() {
        // Teacher features equal the projected student features by
        // construction: run the head once and use its output as the target.
        let store = identity_head_store(2);
        let head = ProjectionHead::build("mid", &store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f_s = Tensor5::from_fn([1, 2, 2, 2, 2], |_, _, _, _, _| rng.random_range(-1.0..1.0))
            .unwrap();
        let z = head.forward(&f_s).unwrap();
        let mut student = FeatureMap::new();
        student.insert("mid".into(), f_s);
        let mut teacher = FeatureMap::new();
        teacher.insert("mid".into(), z);
        let mut grads = WeightStore::new();
        let (l, fg) = distill_loss(&student, &teacher, &[head], &mut grads).unwrap();
        assert_eq!(l, 0.0);
        assert!(fg["mid"].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distill_constant_unit_gap() {
        // Projected student is constant 0 (zero head), teacher constant 1:
        // mean |0 - 1| = 1.
        let mut store = WeightStore::new();
        for (name, dims) in head_weight_spec("mid", 2, 2) {
            let n: usize = dims.iter().product();
            store.insert(&name, NamedTensor::new(dims, vec![0.0f64; n]).unwrap()).unwrap();
        }
        let head = ProjectionHead::build("mid", &store).unwrap();
        let mut student = FeatureMap::new();
        student.insert("mid".into(), Tensor5::full([1, 2, 1, 2, 2], 0.7f64).unwrap());
        let mut teacher = FeatureMap::new();
        teacher.insert("mid".into(), Tensor5::full([1, 2, 1, 2, 2], 1.0f64).unwrap());
        let mut grads = WeightStore::new();
        let (l, _) = distill_loss(&student, &teacher, &[head], &mut grads).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_block_is_config_error() {
        let store = identity_head_store(2);
        let head = ProjectionHead::build("mid", &store).unwrap();
        let student = FeatureMap::new();
        let teacher = FeatureMap::new();
        let mut grads = WeightStore::new();
        assert!(matches!(
            distill_loss(&student, &teacher, &[head], &mut grads),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn total_degenerates_to_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor5::<f64>::from_fn([1, 3, 2, 4, 4], |_, _, _, _, _| rng.random_range(0.0..1.0))
            .unwrap();
        let r = Tensor5::<f64>::from_fn([1, 3, 2, 4, 4], |_, _, _, _, _| rng.random_range(0.0..1.0))
            .unwrap();
        let w = LossWeights { alpha_distill: 0.0, alpha_kl: 0.0, ..Default::default() };
        let (b, _) = total_loss(&t, &r, 0.37, 0.91, &w, None, None, false).unwrap();
        assert_eq!(b.total, b.l1);
        // Perfect reconstruction, standard-normal latent: every component 0.
        let (b, g) = total_loss(&t, &t, 0.0, 0.0, &LossWeights::default(), None, None, false)
            .unwrap();
        assert_eq!(b.total, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }
}
