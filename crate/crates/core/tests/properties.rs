//! Property tests for the structural invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use vaed_core::metrics::psnr;
use vaed_core::upsample::{
    decoupled_upsample, pixel_shuffle_2d_video, pixel_shuffle_3d, pixel_unshuffle_2d_video,
    pixel_unshuffle_3d, UpsampleFactors,
};
use vaed_core::weights::{NamedTensor, WeightStore};
use vaed_core::{Shape5, Tensor5};

fn small_shape() -> impl Strategy<Value = Shape5> {
    (1usize..=2, 1usize..=4, 1usize..=3, 1usize..=4, 1usize..=4)
        .prop_map(|(n, c, t, h, w)| [n, c, t, h, w])
}

fn tensor_with(shape: Shape5) -> impl Strategy<Value = Tensor5<f32>> {
    let n: usize = shape.iter().product();
    vec(-1.0f32..1.0, n).prop_map(move |data| Tensor5::from_vec(shape, data).unwrap())
}

proptest! {
    /// Flatten-then-reshape reproduces every element bit-exactly.
    #[test]
    fn reshape_round_trip(shape in small_shape(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor5::<f32>::from_fn(shape, |_, _, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let flat = x.clone().reshape([1, 1, 1, 1, x.numel()]).unwrap();
        let back = flat.reshape(shape).unwrap();
        prop_assert!(x.as_slice().iter().zip(back.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    /// scale(add(a, b), k) == add(scale(a, k), scale(b, k)) within a
    /// ULP-scaled tolerance.
    #[test]
    fn add_scale_linearity(
        (a, b) in small_shape().prop_flat_map(|s| (tensor_with(s), tensor_with(s))),
        k in -4.0f32..4.0,
    ) {
        let lhs = a.add(&b).unwrap().scale(k);
        let rhs = a.scale(k).add(&b.scale(k)).unwrap();
        for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            let tol = 4.0 * f32::EPSILON * x.abs().max(y.abs()).max(1.0);
            prop_assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    /// reduce_mean_abs is invariant under element reordering (up to
    /// accumulation rounding).
    #[test]
    fn mean_abs_permutation_invariant(
        data in vec(-10.0f32..10.0, 1..=64),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = data.len();
        let a = Tensor5::from_vec([1, 1, 1, 1, n], data.clone()).unwrap();
        let mut shuffled = data;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = Tensor5::from_vec([1, 1, 1, 1, n], shuffled).unwrap();
        let (x, y) = (a.reduce_mean_abs().unwrap(), b.reduce_mean_abs().unwrap());
        let tol = n as f32 * f32::EPSILON * x.abs().max(1.0);
        prop_assert!((x - y).abs() <= tol, "{x} vs {y}");
    }

    /// Shuffle-family ops are bijections: multisets preserved, inverses exact,
    /// and every upsampler obeys the shape law
    /// (N, r_t·r_s²·C, T, H, W) → (N, C, r_t·T, r_s·H, r_s·W).
    #[test]
    fn shuffles_are_bijections(
        c in 1usize..=3,
        r_t in 1usize..=2,
        r_s in 1usize..=2,
        t in 1usize..=3,
        h in 1usize..=3,
        w in 1usize..=3,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shape = [1, c * r_t * r_s * r_s, t, h, w];
        let x = Tensor5::<f32>::from_fn(shape, |_, _, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let f = UpsampleFactors { r_t, r_s };

        let y3 = pixel_shuffle_3d(&x, r_t, r_s).unwrap();
        prop_assert_eq!(y3.shape(), [1, c, r_t * t, r_s * h, r_s * w]);
        prop_assert_eq!(&pixel_unshuffle_3d(&y3, r_t, r_s).unwrap(), &x);

        let yd = decoupled_upsample(&x, f).unwrap();
        prop_assert_eq!(yd.shape(), y3.shape());
        let mut a: Vec<u32> = x.as_slice().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = yd.as_slice().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);

        let y2 = pixel_shuffle_2d_video(&x, r_s).unwrap();
        prop_assert_eq!(&pixel_unshuffle_2d_video(&y2, r_s).unwrap(), &x);
    }

    /// PSNR is symmetric in its arguments.
    #[test]
    fn psnr_symmetry((a, b) in small_shape().prop_flat_map(|s| (tensor_with(s), tensor_with(s)))) {
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    /// TVWD stores round-trip bitwise for arbitrary shapes and raw contents.
    #[test]
    fn store_round_trip_bitwise(
        entries in vec((vec(1usize..=4, 1..=5), vec(any::<u32>(), 0..=0)), 1..=4),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::<f32>::new();
        for (i, (dims, _)) in entries.iter().enumerate() {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.random::<u32>())).collect();
            store
                .insert(&format!("e/{i}"), NamedTensor::new(dims.clone(), data).unwrap())
                .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tvwd");
        store.save(&path).unwrap();
        let loaded = WeightStore::load(&path).unwrap();
        prop_assert_eq!(loaded.len(), store.len());
        for (name, e) in store.iter() {
            let got = loaded.get(name).unwrap();
            prop_assert_eq!(&got.dims, &e.dims);
            prop_assert!(e.data.iter().zip(&got.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
