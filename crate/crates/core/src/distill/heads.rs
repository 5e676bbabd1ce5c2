//! Projection heads: two pointwise 3D convolutions with SiLU between,
//! mapping student feature channels to the teacher's width at an aligned
//! block. Heads are trainable during distillation and discarded afterwards.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decoder::graph::ConvUnit;
use crate::error::{Error, Result};
use crate::ops::{silu, silu_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;
use crate::weights::{NamedTensor, WeightStore};

/// Weight names a head demands: `proj/<block>/conv{1,2}/{weight,bias}`.
/// Hidden width equals the teacher channel count.
pub fn head_weight_spec(
    block: &str,
    c_student: usize,
    c_teacher: usize,
) -> Vec<(String, Vec<usize>)> {
    let hidden = c_teacher;
    vec![
        (format!("proj/{block}/conv1/weight"), vec![hidden, c_student, 1, 1, 1]),
        (format!("proj/{block}/conv1/bias"), vec![hidden]),
        (format!("proj/{block}/conv2/weight"), vec![c_teacher, hidden, 1, 1, 1]),
        (format!("proj/{block}/conv2/bias"), vec![c_teacher]),
    ]
}

/// He-normal init for every aligned block's head, inserted into `store`.
pub fn init_head_weights<S: Scalar>(
    store: &mut WeightStore<S>,
    align: &[(String, usize, usize)],
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    for (block, c_s, c_t) in align {
        for (name, dims) in head_weight_spec(block, *c_s, *c_t) {
            let n: usize = dims.iter().product();
            let data: Vec<S> = if name.ends_with("/weight") {
                let fan_in = dims[1];
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| S::of_f64(normal.sample(&mut rng) * std)).collect()
            } else {
                vec![S::zero(); n]
            };
            store.insert(&name, NamedTensor::new(dims, data)?)?;
        }
    }
    Ok(())
}

pub struct ProjectionHead<S> {
    block: String,
    conv1: ConvUnit<S>,
    conv2: ConvUnit<S>,
}

impl<S: Scalar> ProjectionHead<S> {
    pub fn build(block: &str, store: &WeightStore<S>) -> Result<Self> {
        Ok(Self {
            block: block.to_string(),
            conv1: ConvUnit::pointwise(&format!("proj/{block}/conv1"), store)?,
            conv2: ConvUnit::pointwise(&format!("proj/{block}/conv2"), store)?,
        })
    }

    pub fn block(&self) -> &str {
        &self.block
    }

    /// Channel projection; `(N, T, H, W)` extents are preserved.
    pub fn forward(&self, x: &Tensor5<S>) -> Result<Tensor5<S>> {
        let h = silu(&self.conv1.forward(x)?);
        let out = self.conv2.forward(&h)?;
        let ([n, _, t, hh, w], [n2, _, t2, h2, w2]) = (x.shape(), out.shape());
        if (n, t, hh, w) != (n2, t2, h2, w2) {
            return Err(Error::Shape("projection head changed non-channel extents".into()));
        }
        Ok(out)
    }

    /// Input gradient; head parameter gradients accumulate into `grads`.
    /// The pointwise intermediates are recomputed (they are cheap).
    pub fn backward(
        &self,
        x: &Tensor5<S>,
        upstream: &Tensor5<S>,
        grads: &mut WeightStore<S>,
    ) -> Result<Tensor5<S>> {
        let a1 = self.conv1.forward(x)?;
        let a2 = silu(&a1);
        let d = self.conv2.backward(&a2, upstream, grads)?;
        let d = silu_backward(&a1, &d)?;
        self.conv1.backward(x, &d, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn preserves_extents_and_projects_channels() {
        let mut store = WeightStore::<f32>::new();
        init_head_weights(&mut store, &[("mid".into(), 4, 6)], 3).unwrap();
        let head = ProjectionHead::build("mid", &store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor5::from_fn([2, 4, 3, 2, 2], |_, _, _, _, _| rng.random_range(-1.0..1.0))
            .unwrap();
        let y = head.forward(&x).unwrap();
        assert_eq!(y.shape(), [2, 6, 3, 2, 2]);
    }

    #[test]
    fn identity_head_passes_features_through() {
        // Square channels, conv1 = conv2 = identity: silu is not identity,
        // so build explicit weights where conv1 doubles and conv2 maps back.
        let mut store = WeightStore::<f32>::new();
        for (name, dims) in head_weight_spec("mid", 2, 2) {
            let n: usize = dims.iter().product();
            store.insert(&name, NamedTensor::new(dims, vec![0.0; n]).unwrap()).unwrap();
        }
        // conv1 identity.
        store.get_mut("proj/mid/conv1/weight").unwrap().data[0] = 1.0; // (0,0)
        store.get_mut("proj/mid/conv1/weight").unwrap().data[3] = 1.0; // (1,1)
        store.get_mut("proj/mid/conv2/weight").unwrap().data[0] = 1.0;
        store.get_mut("proj/mid/conv2/weight").unwrap().data[3] = 1.0;
        let head = ProjectionHead::build("mid", &store).unwrap();
        let x = Tensor5::full([1, 2, 1, 1, 1], 3.0f32).unwrap();
        let y = head.forward(&x).unwrap();
        // y = silu(3) = 3 * sigmoid(3).
        let expected = 3.0f32 * (1.0 / (1.0 + (-3.0f32).exp()));
        assert!((y.at(0, 0, 0, 0, 0) - expected).abs() < 1e-6);
    }
}
