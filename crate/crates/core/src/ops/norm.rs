//! Group normalization over (channels-in-group, T, H, W) per sample.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{sentinel, Tensor5};

#[derive(Clone, Debug)]
pub struct GroupNormParams<S> {
    pub num_groups: usize,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub epsilon: S,
}

impl<S: Scalar> GroupNormParams<S> {
    pub fn new(num_groups: usize, gamma: Vec<S>, beta: Vec<S>, epsilon: S) -> Result<Self> {
        if num_groups == 0 {
            return Err(Error::Config("num_groups must be positive".into()));
        }
        if gamma.len() != beta.len() {
            return Err(Error::Config("gamma/beta length mismatch".into()));
        }
        if gamma.len() % num_groups != 0 {
            return Err(Error::Config(format!(
                "channel count {} not divisible by {num_groups} groups",
                gamma.len()
            )));
        }
        if epsilon <= S::zero() {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(Self { num_groups, gamma, beta, epsilon })
    }

    /// gamma = 1, beta = 0.
    pub fn unit(num_groups: usize, channels: usize, epsilon: S) -> Result<Self> {
        Self::new(num_groups, vec![S::one(); channels], vec![S::zero(); channels], epsilon)
    }
}

fn check<S: Scalar>(x: &Tensor5<S>, p: &GroupNormParams<S>) -> Result<(usize, usize)> {
    let [_, c, t, h, w] = x.shape();
    if c != p.gamma.len() {
        return Err(Error::Shape(format!(
            "group_norm: input has {c} channels, params expect {}",
            p.gamma.len()
        )));
    }
    if c % p.num_groups != 0 {
        return Err(Error::Config(format!(
            "channel count {c} not divisible by {} groups",
            p.num_groups
        )));
    }
    let cg = c / p.num_groups;
    let m = cg * t * h * w;
    if m == 0 {
        return Err(Error::Shape("group_norm: empty group".into()));
    }
    Ok((cg, m))
}

/// Per (sample, group): subtract the mean, divide by `sqrt(var + eps)`,
/// then apply the per-channel affine.
pub fn group_norm<S: Scalar>(x: &Tensor5<S>, p: &GroupNormParams<S>) -> Result<Tensor5<S>> {
    let (cg, m) = check(x, p)?;
    let [n, _c, t, h, w] = x.shape();
    let plane = t * h * w;
    let mut out = x.zeros_like();
    let inv_m = S::one() / S::of_usize(m);

    for ni in 0..n {
        for g in 0..p.num_groups {
            let mut mean = S::zero();
            for j in 0..cg {
                for &v in x.chan(ni, g * cg + j) {
                    mean += v;
                }
            }
            mean = mean * inv_m;
            let mut var = S::zero();
            for j in 0..cg {
                for &v in x.chan(ni, g * cg + j) {
                    let d = v - mean;
                    var += d * d;
                }
            }
            var = var * inv_m;
            let inv_sigma = S::one() / (var + p.epsilon).sqrt();
            for j in 0..cg {
                let c = g * cg + j;
                let (gam, bet) = (p.gamma[c], p.beta[c]);
                let src = x.chan(ni, c);
                let dst = out.chan_mut(ni, c);
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = gam * (v - mean) * inv_sigma + bet;
                }
            }
        }
    }
    let _ = plane;
    sentinel("group_norm", &[x.as_slice()], out.as_slice());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GroupNormGrads<S> {
    pub input: Tensor5<S>,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

/// Reverse-mode derivatives; statistics recomputed from the cached input.
pub fn group_norm_backward<S: Scalar>(
    x: &Tensor5<S>,
    p: &GroupNormParams<S>,
    upstream: &Tensor5<S>,
) -> Result<GroupNormGrads<S>> {
    let (cg, m) = check(x, p)?;
    if upstream.shape() != x.shape() {
        return Err(Error::Shape("upstream shape mismatch".into()));
    }
    let [n, c, ..] = x.shape();
    let mut d_input = x.zeros_like();
    let mut d_gamma = vec![S::zero(); c];
    let mut d_beta = vec![S::zero(); c];
    let inv_m = S::one() / S::of_usize(m);

    for ni in 0..n {
        for g in 0..p.num_groups {
            let mut mean = S::zero();
            for j in 0..cg {
                for &v in x.chan(ni, g * cg + j) {
                    mean += v;
                }
            }
            mean = mean * inv_m;
            let mut var = S::zero();
            for j in 0..cg {
                for &v in x.chan(ni, g * cg + j) {
                    let d = v - mean;
                    var += d * d;
                }
            }
            var = var * inv_m;
            let inv_sigma = S::one() / (var + p.epsilon).sqrt();

            // g_i = up_i * gamma_c; accumulate group means of g and g*xhat.
            let mut g_mean = S::zero();
            let mut gx_mean = S::zero();
            for j in 0..cg {
                let ch = g * cg + j;
                let gam = p.gamma[ch];
                let src = x.chan(ni, ch);
                let ups = upstream.chan(ni, ch);
                for (&v, &u) in src.iter().zip(ups) {
                    let xhat = (v - mean) * inv_sigma;
                    let gi = u * gam;
                    g_mean += gi;
                    gx_mean += gi * xhat;
                    d_gamma[ch] += u * xhat;
                    d_beta[ch] += u;
                }
            }
            g_mean = g_mean * inv_m;
            gx_mean = gx_mean * inv_m;
            for j in 0..cg {
                let ch = g * cg + j;
                let gam = p.gamma[ch];
                let src = x.chan(ni, ch);
                let ups = upstream.chan(ni, ch);
                let mut row = Vec::with_capacity(src.len());
                for (&v, &u) in src.iter().zip(ups) {
                    let xhat = (v - mean) * inv_sigma;
                    let gi = u * gam;
                    row.push((gi - g_mean - xhat * gx_mean) * inv_sigma);
                }
                d_input.chan_mut(ni, ch).copy_from_slice(&row);
            }
        }
    }
    Ok(GroupNormGrads { input: d_input, gamma: d_gamma, beta: d_beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_input_collapses_to_zero() {
        let x = Tensor5::full([1, 4, 2, 2, 2], 3.7f32).unwrap();
        let p = GroupNormParams::unit(2, 4, 1e-6).unwrap();
        let y = group_norm(&x, &p).unwrap();
        assert!(y.as_slice().iter().all(|&v| v.abs() < 1e-3));
    }

    #[test]
    fn affine_override() {
        let x = Tensor5::full([1, 4, 1, 2, 2], 1.0f32).unwrap();
        let p = GroupNormParams::new(2, vec![0.0; 4], vec![2.5; 4], 1e-6).unwrap();
        let y = group_norm(&x, &p).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn normalized_statistics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Tensor5::<f64>::from_fn([1, 4, 2, 2, 2], |_, _, _, _, _| rng.random_range(-2.0..2.0))
            .unwrap();
        let p = GroupNormParams::unit(2, 4, 1e-6).unwrap();
        let y = group_norm(&x, &p).unwrap();
        for g in 0..2usize {
            let vals: Vec<f64> = (0..2)
                .flat_map(|j| y.chan(0, g * 2 + j).to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6, "group mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "group var {v}");
        }
    }

    #[test]
    fn divisibility_violation() {
        let x = Tensor5::<f32>::zeros([1, 3, 1, 2, 2]).unwrap();
        let p = GroupNormParams::unit(2, 3, 1e-6);
        assert!(p.is_err());
        let p = GroupNormParams::unit(1, 4, 1e-6).unwrap();
        assert!(group_norm(&x, &p).is_err());
    }
}
