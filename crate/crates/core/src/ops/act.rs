//! SiLU nonlinearity: `x * sigmoid(x)`.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{sentinel, Tensor5};

#[inline]
pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    // Evaluate with a non-overflowing exponent on both tails.
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

pub fn silu<S: Scalar>(x: &Tensor5<S>) -> Tensor5<S> {
    let out = x.map(|v| v * sigmoid(v));
    sentinel("silu", &[x.as_slice()], out.as_slice());
    out
}

/// `d/dx [x·σ(x)] = σ(x)·(1 + x·(1 − σ(x)))`, times the upstream gradient.
pub fn silu_backward<S: Scalar>(x: &Tensor5<S>, upstream: &Tensor5<S>) -> Result<Tensor5<S>> {
    x.zip_map(upstream, |v, u| {
        let s = sigmoid(v);
        u * s * (S::one() + v * (S::one() - s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_values() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 3], vec![0.0f64, 1.0, 25.0]).unwrap();
        let y = silu(&x);
        assert_eq!(y.at(0, 0, 0, 0, 0), 0.0);
        assert!((y.at(0, 0, 0, 0, 1) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((y.at(0, 0, 0, 0, 2) - 25.0).abs() < 1e-4);
    }

    #[test]
    fn gradient_at_zero_is_half() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 1], vec![0.0f64]).unwrap();
        let up = Tensor5::from_vec([1, 1, 1, 1, 1], vec![3.0f64]).unwrap();
        let g = silu_backward(&x, &up).unwrap();
        assert_eq!(g.at(0, 0, 0, 0, 0), 1.5);
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 2], vec![-1.0e30f32, 1.0e30]).unwrap();
        let y = silu(&x);
        assert!(y.as_slice().iter().all(|v| v.is_finite()));
    }
}
