//! Adam with decoupled weight decay (decay 0 by default).

use indexmap::IndexMap;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::weights::WeightStore;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First/second moments per parameter name.
#[derive(Debug, Default)]
pub struct AdamState<S> {
    m: IndexMap<String, Vec<S>>,
    v: IndexMap<String, Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new() -> Self {
        Self { m: IndexMap::new(), v: IndexMap::new(), step: 0 }
    }
}

/// One update over every parameter in `params`. Parameters without an entry
/// in `grads` see a zero gradient (their moments still decay).
pub fn adam_step<S: Scalar>(
    params: &mut WeightStore<S>,
    grads: &WeightStore<S>,
    state: &mut AdamState<S>,
    hyper: &AdamHyper,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = S::of_f64(hyper.beta1);
    let b2 = S::of_f64(hyper.beta2);
    let one_m_b1 = S::of_f64(1.0 - hyper.beta1);
    let one_m_b2 = S::of_f64(1.0 - hyper.beta2);
    let bc1 = S::of_f64(1.0 - hyper.beta1.powi(t));
    let bc2 = S::of_f64(1.0 - hyper.beta2.powi(t));
    let lr = S::of_f64(hyper.lr);
    let eps = S::of_f64(hyper.eps);
    let wd = S::of_f64(hyper.weight_decay);

    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in names {
        let n = params.get(&name).map(|e| e.data.len()).unwrap_or(0);
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
        let g = grads.get(&name).map(|e| e.data.as_slice());
        let p = params.get_mut(&name).expect("param present").data.as_mut_slice();
        for i in 0..n {
            let gi = g.map(|g| g[i]).unwrap_or_else(S::zero);
            m[i] = b1 * m[i] + one_m_b1 * gi;
            v[i] = b2 * v[i] + one_m_b2 * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
        }
    }
    Ok(())
}
