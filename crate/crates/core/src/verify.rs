//! Self-check suites with independent oracles: the permutation-equivalence
//! law for the decoupled upsampler, the separable-convolution factorization,
//! and central-difference gradient checks. The CLI `verify` subcommand runs
//! these; the acceptance tests call them too.
//!
//! Oracles here re-derive expected values from the index laws and from
//! finite differences; they never call the code path under test to produce
//! an expectation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

use crate::decoder::config::tiny_config;
use crate::decoder::graph::{init_weights, CompiledDecoder, FeatureMap};
use crate::distill::heads::{init_head_weights, ProjectionHead};
use crate::distill::loss::{distill_loss, l1_loss, total_loss, LossWeights};
use crate::error::Result;
use crate::ops::{
    conv3d, conv3d_backward, dwsep_conv3d, dwsep_conv3d_backward, group_norm,
    group_norm_backward, silu, silu_backward, Conv3dParams, DwSepConv3dParams, GroupNormParams,
    PadSpec,
};
use crate::tensor::Tensor5;
use crate::upsample::{
    channel_to_time, decoupled_upsample, pixel_shuffle_2d_video, pixel_shuffle_3d,
    pixel_unshuffle_2d_video, pixel_unshuffle_3d, time_to_channel, UpsampleFactors,
};
use crate::weights::WeightStore;
use crate::{Tensor5d, Tensor5f};

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub pass: bool,
    /// Counterexample or summary.
    pub details: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub properties: Vec<PropertyResult>,
    pub elapsed_ms: u128,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(|p| p.pass)
    }
}

fn prop(name: &str, failure: Option<String>, ok_details: String) -> PropertyResult {
    match failure {
        Some(details) => PropertyResult { name: name.into(), pass: false, details },
        None => PropertyResult { name: name.into(), pass: true, details: ok_details },
    }
}

fn rand_f32(shape: crate::Shape5, rng: &mut ChaCha8Rng) -> Tensor5f {
    Tensor5::from_fn(shape, |_, _, _, _, _| rng.random_range(-1.0f32..1.0)).expect("shape")
}

fn rand_f64(shape: crate::Shape5, rng: &mut ChaCha8Rng) -> Tensor5d {
    Tensor5::from_fn(shape, |_, _, _, _, _| rng.random_range(-1.0f64..1.0)).expect("shape")
}

// ---------------------------------------------------------------------------
// Upsampling suite
// ---------------------------------------------------------------------------

/// Solve for the input-channel permutation that makes the 3D pixel shuffle
/// reproduce the decoupled scheme, by enumerating both index laws.
/// `perm[q]` is the source channel the permuted input takes at channel `q`.
pub fn derive_channel_permutation(c_out: usize, r_t: usize, r_s: usize) -> Vec<usize> {
    let m = c_out * r_t * r_s * r_s;
    // Destination (c, dt, dh, dw) read from channel q by the 3D shuffle law.
    let dest_3d = |q: usize| {
        let dw = q % r_s;
        let dh = (q / r_s) % r_s;
        let dt = (q / (r_s * r_s)) % r_t;
        let c = q / (r_t * r_s * r_s);
        (c, dt, dh, dw)
    };
    // Destination written from channel p by channel→time then the 2D law.
    let dest_dec = |p: usize| {
        let j = p / (r_s * r_s * c_out);
        let rem = p % (r_s * r_s * c_out);
        let dw = rem / (c_out * r_s);
        let dh = (rem % (c_out * r_s)) / c_out;
        let c = rem % c_out;
        (c, j, dh, dw)
    };
    let mut perm = vec![0usize; m];
    for q in 0..m {
        let key = dest_3d(q);
        let p = (0..m).find(|&p| dest_dec(p) == key).expect("bijective index laws");
        perm[q] = p;
    }
    perm
}

fn check_permutation_equivalence() -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for c in 1..=3usize {
        for r_t in 1..=2usize {
            for r_s in 1..=2usize {
                let perm = derive_channel_permutation(c, r_t, r_s);
                for t in 1..=4usize {
                    for h in 1..=4usize {
                        for w in 1..=4usize {
                            let shape = [1, c * r_t * r_s * r_s, t, h, w];
                            let x = rand_f32(shape, &mut rng);
                            let dec = decoupled_upsample(&x, UpsampleFactors { r_t, r_s })
                                .expect("decoupled");
                            let permuted = x.permute_channels(&perm).expect("perm");
                            let ps = pixel_shuffle_3d(&permuted, r_t, r_s).expect("shuffle");
                            if dec != ps {
                                return Some(format!(
                                    "C'={c} r_t={r_t} r_s={r_s} shape=({t},{h},{w}): \
                                     decoupled != shuffled(permuted)"
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    None
}

fn check_eq3_probes(
    ps2d: &dyn Fn(&Tensor5f, usize) -> Result<Tensor5f>,
    probes: usize,
) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for i in 0..probes {
        let c_out = rng.random_range(1..=3usize);
        let r = rng.random_range(1..=3usize);
        let t = rng.random_range(1..=4usize);
        let h = rng.random_range(1..=4usize);
        let w = rng.random_range(1..=4usize);
        let x = rand_f32([1, c_out * r * r, t, h, w], &mut rng);
        let y = match ps2d(&x, r) {
            Ok(y) => y,
            Err(e) => return Some(format!("probe {i}: op failed: {e}")),
        };
        // One random output index, checked against the printed index law:
        // Y[c, t, h, w] = F[C·r·(w mod r) + C·(h mod r) + c, t, h/r, w/r].
        let (c, tt) = (rng.random_range(0..c_out), rng.random_range(0..t));
        let hh = rng.random_range(0..r * h);
        let ww = rng.random_range(0..r * w);
        let src = x.at(0, c_out * r * (ww % r) + c_out * (hh % r) + c, tt, hh / r, ww / r);
        let got = y.at(0, c, tt, hh, ww);
        if got.to_bits() != src.to_bits() {
            return Some(format!(
                "probe {i}: C'={c_out} r={r} index (c={c},t={tt},h={hh},w={ww}): \
                 got {got}, law says {src}"
            ));
        }
    }
    None
}

fn check_bijections() -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..50 {
        let c = rng.random_range(1..=2usize);
        let (r_t, r_s) = (rng.random_range(1..=2usize), rng.random_range(1..=2usize));
        let x = rand_f32(
            [1, c * r_t * r_s * r_s, rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)],
            &mut rng,
        );
        let f = UpsampleFactors { r_t, r_s };
        let y = pixel_shuffle_3d(&x, r_t, r_s).expect("shuffle");
        if pixel_unshuffle_3d(&y, r_t, r_s).expect("unshuffle") != x {
            return Some("pixel_shuffle_3d inverse failed".into());
        }
        let y = decoupled_upsample(&x, f).expect("decoupled");
        let back = time_to_channel(
            &pixel_unshuffle_2d_video(&y, r_s).expect("unshuffle2d"),
            r_t,
        )
        .expect("t2c");
        if back != x {
            return Some("decoupled inverse failed".into());
        }
        let mut a: Vec<u32> = x.as_slice().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = y.as_slice().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Some("element multiset not preserved".into());
        }
    }
    None
}

/// Upsampling suite against an injectable 2D-shuffle implementation
/// (the test seam for fault-injection fixtures).
pub fn upsample_suite_with(ps2d: &dyn Fn(&Tensor5f, usize) -> Result<Tensor5f>) -> SuiteReport {
    let t0 = Instant::now();
    let properties = vec![
        prop(
            "decoupled equals 3D shuffle after the derived channel permutation (exhaustive)",
            check_permutation_equivalence(),
            "C' in 1..=3, r in {1,2}^2, extents 1..=4, exact equality".into(),
        ),
        prop(
            "framewise 2D shuffle matches the printed index law",
            check_eq3_probes(ps2d, 1000),
            "1000 random (index, shape) probes, bit-exact".into(),
        ),
        prop(
            "shuffle family ops are bijections",
            check_bijections(),
            "inverses and element multisets verified on 50 random shapes".into(),
        ),
    ];
    SuiteReport { suite: "upsample".into(), properties, elapsed_ms: t0.elapsed().as_millis() }
}

pub fn upsample_suite() -> SuiteReport {
    upsample_suite_with(&|x, r| pixel_shuffle_2d_video(x, r))
}

// ---------------------------------------------------------------------------
// Separable-factorization suite
// ---------------------------------------------------------------------------

fn check_factorization(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for i in 0..instances {
        let c_in = rng.random_range(1..=3usize);
        let c_out = rng.random_range(1..=3usize);
        let k = *[1usize, 3].get(rng.random_range(0..2)).unwrap();
        let causal = rng.random_range(0..2) == 0;
        let pad = if causal {
            PadSpec::same_causal((k, k, k))
        } else {
            PadSpec::same_symmetric((k, k, k))
        };
        let dw = rand_f32([c_in, 1, k, k, k], &mut rng);
        let pw = rand_f32([c_out, c_in, 1, 1, 1], &mut rng);
        let dwb: Vec<f32> = (0..c_in).map(|_| rng.random_range(-0.5..0.5)).collect();
        let pwb: Vec<f32> = (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect();
        let sep = DwSepConv3dParams::new(dw.clone(), Some(dwb.clone()), pw.clone(), Some(pwb.clone()), pad)
            .expect("params");

        // Oracle kernel, built here from the factorization law:
        // K_full[n, m, i, j, f] = pw[n, m] * dw[m, i, j, f];
        // b_full[n] = pwb[n] + sum_m pw[n, m] * dwb[m].
        let mut full = Tensor5::zeros([c_out, c_in, k, k, k]).unwrap();
        for n in 0..c_out {
            for m in 0..c_in {
                for ki in 0..k {
                    for kj in 0..k {
                        for kf in 0..k {
                            *full.at_mut(n, m, ki, kj, kf) =
                                pw.at(n, m, 0, 0, 0) * dw.at(m, 0, ki, kj, kf);
                        }
                    }
                }
            }
        }
        let bias: Vec<f32> = (0..c_out)
            .map(|n| pwb[n] + (0..c_in).map(|m| pw.at(n, m, 0, 0, 0) * dwb[m]).sum::<f32>())
            .collect();
        let full_params = Conv3dParams::new(full, Some(bias), pad).expect("full params");

        let x = rand_f32(
            [rng.random_range(1..=2), c_in, rng.random_range(1..=3), rng.random_range(2..=4), rng.random_range(2..=4)],
            &mut rng,
        );
        let a = dwsep_conv3d(&x, &sep).expect("sep");
        let b = conv3d(&x, &full_params).expect("full");
        let scale = a
            .as_slice()
            .iter()
            .fold(1.0f32, |m, v| m.max(v.abs()));
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            if (u - v).abs() > 1e-5 * scale {
                return Some(format!(
                    "instance {i}: |{u} - {v}| > 1e-5 * {scale} (k={k}, causal={causal})"
                ));
            }
        }
    }
    None
}

pub fn dwsep_suite() -> SuiteReport {
    let t0 = Instant::now();
    let properties = vec![prop(
        "separable convolution equals the factorized full kernel",
        check_factorization(200),
        "200 random tiny instances, 1e-5 relative (output-scale) tolerance".into(),
    )];
    SuiteReport { suite: "dwsep".into(), properties, elapsed_ms: t0.elapsed().as_millis() }
}

// ---------------------------------------------------------------------------
// Gradient suite (f64 central differences)
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;

/// Compare analytic gradients against central differences at sampled
/// coordinates. `eval` recomputes the scalar loss from the flat parameter
/// vector. Returns the first violation.
fn fd_mismatch(
    label: &str,
    x0: &[f64],
    analytic: &[f64],
    mut eval: impl FnMut(&[f64]) -> f64,
    rng: &mut ChaCha8Rng,
    samples: usize,
) -> Option<String> {
    assert_eq!(x0.len(), analytic.len());
    let mut x = x0.to_vec();
    let n = x.len();
    for _ in 0..samples.min(n) {
        let i = rng.random_range(0..n);
        let h = FD_STEP * x[i].abs().max(1.0);
        let orig = x[i];
        x[i] = orig + h;
        let up = eval(&x);
        x[i] = orig - h;
        let down = eval(&x);
        x[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        if (a - fd).abs() > (FD_REL_TOL * a.abs().max(fd.abs())).max(1e-8) {
            return Some(format!("{label}[{i}]: analytic {a:.6e} vs fd {fd:.6e}"));
        }
    }
    None
}

/// Scalar loss `Σ u ⊙ y` — a random linear functional of the op output, so
/// the analytic gradient is exactly the backward pass applied to `u`.
fn dot(u: &Tensor5d, y: &Tensor5d) -> f64 {
    u.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum()
}

fn grad_conv3d(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for i in 0..instances {
        let c_in = rng.random_range(1..=2usize);
        let c_out = rng.random_range(1..=2usize);
        let k = *[1usize, 3].get(rng.random_range(0..2)).unwrap();
        let causal = rng.random_range(0..2) == 0;
        let pad = if causal { PadSpec::same_causal((k, k, k)) } else { PadSpec::same_symmetric((k, k, k)) };
        let shape = [1, c_in, rng.random_range(1..=3), rng.random_range(2..=3), rng.random_range(2..=3)];
        let x = rand_f64(shape, &mut rng);
        let w = rand_f64([c_out, c_in, k, k, k], &mut rng);
        let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect();
        let p = Conv3dParams::new(w.clone(), Some(b.clone()), pad).expect("params");
        let u = rand_f64([shape[0], c_out, shape[2], shape[3], shape[4]], &mut rng);
        let g = conv3d_backward(&x, &p, &u).expect("backward");

        let label = format!("conv3d#{i}");
        let xs = x.as_slice().to_vec();
        if let Some(err) = fd_mismatch(
            &format!("{label}/input"),
            &xs,
            g.input.as_slice(),
            |v| {
                let xt = Tensor5::from_vec(shape, v.to_vec()).unwrap();
                dot(&u, &conv3d(&xt, &p).unwrap())
            },
            &mut rng,
            4,
        ) {
            return Some(err);
        }
        let ws = w.as_slice().to_vec();
        if let Some(err) = fd_mismatch(
            &format!("{label}/weight"),
            &ws,
            g.weight.as_slice(),
            |v| {
                let wt = Tensor5::from_vec(w.shape(), v.to_vec()).unwrap();
                let pt = Conv3dParams::new(wt, Some(b.clone()), pad).unwrap();
                dot(&u, &conv3d(&x, &pt).unwrap())
            },
            &mut rng,
            4,
        ) {
            return Some(err);
        }
        if let Some(err) = fd_mismatch(
            &format!("{label}/bias"),
            &b,
            g.bias.as_ref().unwrap(),
            |v| {
                let pt = Conv3dParams::new(w.clone(), Some(v.to_vec()), pad).unwrap();
                dot(&u, &conv3d(&x, &pt).unwrap())
            },
            &mut rng,
            2,
        ) {
            return Some(err);
        }
    }
    None
}

fn grad_dwsep(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for i in 0..instances {
        let c_in = rng.random_range(1..=2usize);
        let c_out = rng.random_range(1..=2usize);
        let k = 3usize;
        let pad = PadSpec::same_causal((k, k, k));
        let shape = [1, c_in, rng.random_range(1..=2), rng.random_range(2..=3), rng.random_range(2..=3)];
        let x = rand_f64(shape, &mut rng);
        let dw = rand_f64([c_in, 1, k, k, k], &mut rng);
        let pw = rand_f64([c_out, c_in, 1, 1, 1], &mut rng);
        let dwb: Vec<f64> = (0..c_in).map(|_| rng.random_range(-0.5..0.5)).collect();
        let pwb: Vec<f64> = (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect();
        let p = DwSepConv3dParams::new(dw.clone(), Some(dwb.clone()), pw.clone(), Some(pwb.clone()), pad)
            .expect("params");
        let u = rand_f64([shape[0], c_out, shape[2], shape[3], shape[4]], &mut rng);
        let g = dwsep_conv3d_backward(&x, &p, &u).expect("backward");

        let rebuild = |dwv: &[f64], pwv: &[f64], dwbv: &[f64], pwbv: &[f64]| {
            DwSepConv3dParams::new(
                Tensor5::from_vec(dw.shape(), dwv.to_vec()).unwrap(),
                Some(dwbv.to_vec()),
                Tensor5::from_vec(pw.shape(), pwv.to_vec()).unwrap(),
                Some(pwbv.to_vec()),
                pad,
            )
            .unwrap()
        };
        let label = format!("dwsep#{i}");
        if let Some(err) = fd_mismatch(
            &format!("{label}/input"),
            &x.as_slice().to_vec(),
            g.input.as_slice(),
            |v| {
                let xt = Tensor5::from_vec(shape, v.to_vec()).unwrap();
                dot(&u, &dwsep_conv3d(&xt, &p).unwrap())
            },
            &mut rng,
            4,
        ) {
            return Some(err);
        }
        if let Some(err) = fd_mismatch(
            &format!("{label}/depthwise"),
            &dw.as_slice().to_vec(),
            g.depthwise.as_slice(),
            |v| dot(&u, &dwsep_conv3d(&x, &rebuild(v, pw.as_slice(), &dwb, &pwb)).unwrap()),
            &mut rng,
            4,
        ) {
            return Some(err);
        }
        if let Some(err) = fd_mismatch(
            &format!("{label}/pointwise"),
            &pw.as_slice().to_vec(),
            g.pointwise.as_slice(),
            |v| dot(&u, &dwsep_conv3d(&x, &rebuild(dw.as_slice(), v, &dwb, &pwb)).unwrap()),
            &mut rng,
            4,
        ) {
            return Some(err);
        }
        if let Some(err) = fd_mismatch(
            &format!("{label}/dw_bias"),
            &dwb,
            g.dw_bias.as_ref().unwrap(),
            |v| dot(&u, &dwsep_conv3d(&x, &rebuild(dw.as_slice(), pw.as_slice(), v, &pwb)).unwrap()),
            &mut rng,
            2,
        ) {
            return Some(err);
        }
        if let Some(err) = fd_mismatch(
            &format!("{label}/pw_bias"),
            &pwb,
            g.pw_bias.as_ref().unwrap(),
            |v| dot(&u, &dwsep_conv3d(&x, &rebuild(dw.as_slice(), pw.as_slice(), &dwb, v)).unwrap()),
            &mut rng,
            2,
        ) {
            return Some(err);
        }
    }
    None
}

fn grad_group_norm(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for i in 0..instances {
        let groups = rng.random_range(1..=2usize);
        let c = groups * rng.random_range(1..=2usize);
        let shape = [1, c, rng.random_range(1..=2), rng.random_range(2..=3), rng.random_range(2..=3)];
        let x = rand_f64(shape, &mut rng);
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let p = GroupNormParams::new(groups, gamma.clone(), beta.clone(), 1e-5).expect("params");
        let u = rand_f64(shape, &mut rng);
        let g = group_norm_backward(&x, &p, &u).expect("backward");

        let label = format!("group_norm#{i}");
        if let Some(err) = fd_mismatch(
            &format!("{label}/input"),
            &x.as_slice().to_vec(),
            g.input.as_slice(),
            |v| {
                let xt = Tensor5::from_vec(shape, v.to_vec()).unwrap();
                dot(&u, &group_norm(&xt, &p).unwrap())
            },
            &mut rng,
            5,
        ) {
            return Some(err);
        }
        if let Some(err) = fd_mismatch(
            &format!("{label}/gamma"),
            &gamma,
            &g.gamma,
            |v| {
                let pt = GroupNormParams::new(groups, v.to_vec(), beta.clone(), 1e-5).unwrap();
                dot(&u, &group_norm(&x, &pt).unwrap())
            },
            &mut rng,
            2,
        ) {
            return Some(err);
        }
        if let Some(err) = fd_mismatch(
            &format!("{label}/beta"),
            &beta,
            &g.beta,
            |v| {
                let pt = GroupNormParams::new(groups, gamma.clone(), v.to_vec(), 1e-5).unwrap();
                dot(&u, &group_norm(&x, &pt).unwrap())
            },
            &mut rng,
            2,
        ) {
            return Some(err);
        }
    }
    None
}

fn grad_activation(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for i in 0..instances {
        let shape = [1, rng.random_range(1..=2), 1, rng.random_range(2..=3), rng.random_range(2..=3)];
        let x = rand_f64(shape, &mut rng).scale(3.0);
        let u = rand_f64(shape, &mut rng);
        let g = silu_backward(&x, &u).expect("backward");
        if let Some(err) = fd_mismatch(
            &format!("silu#{i}"),
            &x.as_slice().to_vec(),
            g.as_slice(),
            |v| {
                let xt = Tensor5::from_vec(shape, v.to_vec()).unwrap();
                dot(&u, &silu(&xt))
            },
            &mut rng,
            4,
        ) {
            return Some(err);
        }
    }
    None
}

fn grad_rearrangements(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for i in 0..instances {
        let c = rng.random_range(1..=2usize);
        let (r_t, r_s) = (rng.random_range(1..=2usize), rng.random_range(1..=2usize));
        let shape = [1, c * r_t * r_s * r_s, rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3)];
        let x = rand_f64(shape, &mut rng);
        let f = UpsampleFactors { r_t, r_s };

        // Gradient of a rearrangement is the inverse rearrangement.
        let ops: Vec<(
            &str,
            Box<dyn Fn(&Tensor5d) -> Result<Tensor5d>>,
            Box<dyn Fn(&Tensor5d) -> Result<Tensor5d>>,
        )> = vec![
            (
                "pixel_shuffle_3d",
                Box::new(move |t| pixel_shuffle_3d(t, r_t, r_s)),
                Box::new(move |t| pixel_unshuffle_3d(t, r_t, r_s)),
            ),
            (
                "channel_to_time",
                Box::new(move |t| channel_to_time(t, r_t)),
                Box::new(move |t| time_to_channel(t, r_t)),
            ),
            (
                "pixel_shuffle_2d_video",
                Box::new(move |t| pixel_shuffle_2d_video(t, r_s)),
                Box::new(move |t| pixel_unshuffle_2d_video(t, r_s)),
            ),
            (
                "decoupled_upsample",
                Box::new(move |t| decoupled_upsample(t, f)),
                Box::new(move |t| {
                    time_to_channel(&pixel_unshuffle_2d_video(t, r_s)?, r_t)
                }),
            ),
        ];
        for (name, fwd, inv) in &ops {
            let y = fwd(&x).expect("forward");
            let u = rand_f64(y.shape(), &mut rng);
            let analytic = inv(&u).expect("inverse");
            if let Some(err) = fd_mismatch(
                &format!("{name}#{i}"),
                &x.as_slice().to_vec(),
                analytic.as_slice(),
                |v| {
                    let xt = Tensor5::from_vec(shape, v.to_vec()).unwrap();
                    dot(&u, &fwd(&xt).unwrap())
                },
                &mut rng,
                3,
            ) {
                return Some(err);
            }
        }
    }
    None
}

fn grad_projection_head(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for i in 0..instances {
        let c_s = rng.random_range(1..=2usize);
        let c_t = rng.random_range(1..=3usize);
        let mut store = WeightStore::<f64>::new();
        init_head_weights(&mut store, &[("mid".into(), c_s, c_t)], 42 + i as u64).expect("init");
        let head = ProjectionHead::build("mid", &store).expect("head");
        let shape = [1, c_s, rng.random_range(1..=2), 2, 2];
        let x = rand_f64(shape, &mut rng);
        let y = head.forward(&x).expect("forward");
        let u = rand_f64(y.shape(), &mut rng);
        let mut grads = WeightStore::new();
        let d_x = head.backward(&x, &u, &mut grads).expect("backward");

        if let Some(err) = fd_mismatch(
            &format!("proj_head#{i}/input"),
            &x.as_slice().to_vec(),
            d_x.as_slice(),
            |v| {
                let xt = Tensor5::from_vec(shape, v.to_vec()).unwrap();
                dot(&u, &head.forward(&xt).unwrap())
            },
            &mut rng,
            4,
        ) {
            return Some(err);
        }
        for pname in ["proj/mid/conv1/weight", "proj/mid/conv2/weight", "proj/mid/conv1/bias"] {
            let p0 = store.get(pname).unwrap().data.clone();
            let analytic = grads.get(pname).unwrap().data.clone();
            if let Some(err) = fd_mismatch(
                &format!("proj_head#{i}/{pname}"),
                &p0,
                &analytic,
                |v| {
                    let mut s2 = store.cast::<f64>();
                    s2.get_mut(pname).unwrap().data = v.to_vec();
                    let h2 = ProjectionHead::build("mid", &s2).unwrap();
                    dot(&u, &h2.forward(&x).unwrap())
                },
                &mut rng,
                3,
            ) {
                return Some(err);
            }
        }
    }
    None
}

fn grad_distill_loss(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    for i in 0..instances {
        let c_s = rng.random_range(1..=2usize);
        let c_t = rng.random_range(1..=2usize);
        let mut store = WeightStore::<f64>::new();
        init_head_weights(&mut store, &[("mid".into(), c_s, c_t)], 77 + i as u64).expect("init");
        let head = ProjectionHead::build("mid", &store).expect("head");
        let shape = [1, c_s, 1, 2, 2];
        let f_s = rand_f64(shape, &mut rng);
        let mut t_shape = shape;
        t_shape[1] = c_t;
        let f_t = rand_f64(t_shape, &mut rng);

        let eval = |feat: &[f64], st: &WeightStore<f64>| {
            let mut student = FeatureMap::new();
            student.insert("mid".into(), Tensor5::from_vec(shape, feat.to_vec()).unwrap());
            let mut teacher = FeatureMap::new();
            teacher.insert("mid".into(), f_t.clone());
            let h = ProjectionHead::build("mid", st).unwrap();
            let mut g = WeightStore::new();
            distill_loss(&student, &teacher, &[h], &mut g).unwrap().0
        };

        let mut student = FeatureMap::new();
        student.insert("mid".into(), f_s.clone());
        let mut teacher = FeatureMap::new();
        teacher.insert("mid".into(), f_t.clone());
        let mut grads = WeightStore::new();
        let (_, feat_grads) = distill_loss(&student, &teacher, &[head], &mut grads).expect("loss");

        if let Some(err) = fd_mismatch(
            &format!("distill#{i}/feature"),
            &f_s.as_slice().to_vec(),
            feat_grads["mid"].as_slice(),
            |v| eval(v, &store),
            &mut rng,
            4,
        ) {
            return Some(err);
        }
        let pname = "proj/mid/conv1/weight";
        let p0 = store.get(pname).unwrap().data.clone();
        if let Some(err) = fd_mismatch(
            &format!("distill#{i}/{pname}"),
            &p0,
            &grads.get(pname).unwrap().data,
            |v| {
                let mut s2 = store.cast::<f64>();
                s2.get_mut(pname).unwrap().data = v.to_vec();
                eval(f_s.as_slice(), &s2)
            },
            &mut rng,
            3,
        ) {
            return Some(err);
        }
    }
    None
}

fn grad_total_loss(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    for i in 0..instances {
        let shape = [1, 2, rng.random_range(1..=2), 2, 2];
        let target = rand_f64(shape, &mut rng).map(|v| 0.5 + 0.4 * v);
        // Keep |recon - target| bounded away from the L1 kink.
        let recon = target.zip_map(&rand_f64(shape, &mut rng), |t, r| {
            t + 0.05f64.copysign(r) + 0.3 * r
        })
        .unwrap();
        let w = LossWeights::default();
        let (_, d_recon) = total_loss(&target, &recon, 0.25, 0.75, &w, None, None, false)
            .expect("total");
        if let Some(err) = fd_mismatch(
            &format!("total_loss#{i}/recon"),
            &recon.as_slice().to_vec(),
            d_recon.as_slice(),
            |v| {
                let rt = Tensor5::from_vec(shape, v.to_vec()).unwrap();
                total_loss(&target, &rt, 0.25, 0.75, &w, None, None, false).unwrap().0.total
            },
            &mut rng,
            4,
        ) {
            return Some(err);
        }
    }
    None
}

/// End-to-end: finite differences through decoder_forward + the composite
/// loss, against the trainer's assembled gradients, for sampled weights.
fn grad_end_to_end(instances: usize) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1313);
    let cfg = tiny_config(2, &[4, 4], &[(2, 2)], 2);
    for i in 0..instances {
        let mut trainable = init_weights::<f64>(&cfg, 2000 + i as u64).expect("init");
        init_head_weights(&mut trainable, &[("mid".into(), 4, 6)], 3000 + i as u64).expect("heads");
        let latent = rand_f64([1, 2, 2, 2, 2], &mut rng);
        let video_shape = cfg.video_shape_for(latent.shape()).expect("shape");
        let target = rand_f64(video_shape, &mut rng).map(|v| 0.5 + 0.4 * v);
        let mut teacher_feats = FeatureMap::new();
        teacher_feats.insert("mid".into(), rand_f64([1, 6, 2, 2, 2], &mut rng));
        let alpha = 0.7f64;

        let loss_of = |store: &WeightStore<f64>| -> f64 {
            let dec = CompiledDecoder::build(&cfg, store).unwrap();
            let (recon, feats, _) = dec.forward_with_tape(&latent).unwrap();
            let head = ProjectionHead::build("mid", store).unwrap();
            let mut hg = WeightStore::new();
            let (dl, _) = distill_loss(&feats, &teacher_feats, &[head], &mut hg).unwrap();
            let (l1, _) = l1_loss(&target, &recon).unwrap();
            l1 + alpha * dl
        };

        // Analytic gradients assembled the way the trainer does.
        let dec = CompiledDecoder::build(&cfg, &trainable).unwrap();
        let (recon, feats, tape) = dec.forward_with_tape(&latent).unwrap();
        let head = ProjectionHead::build("mid", &trainable).unwrap();
        let mut grads_heads = WeightStore::new();
        let (_, feat_grads) =
            distill_loss(&feats, &teacher_feats, &[head], &mut grads_heads).unwrap();
        let (_, d_recon) = l1_loss(&target, &recon).unwrap();
        let mut scaled = FeatureMap::new();
        for (k, g) in &feat_grads {
            scaled.insert(k.clone(), g.scale(alpha));
        }
        let mut grads = dec.backward(&tape, &d_recon, &scaled).unwrap();
        for (name, e) in grads_heads.iter() {
            let mut e = e.clone();
            for v in &mut e.data {
                *v *= alpha;
            }
            grads.insert(name, e).unwrap();
        }

        // Probe a few parameters across the depth of the net.
        let names: Vec<String> = trainable.names().map(|s| s.to_string()).collect();
        for pick in 0..6 {
            let name = &names[(pick * 7 + i) % names.len()];
            let p0 = trainable.get(name).unwrap().data.clone();
            let analytic = match grads.get(name) {
                Some(e) => e.data.clone(),
                None => vec![0.0; p0.len()],
            };
            if let Some(err) = fd_mismatch(
                &format!("e2e#{i}/{name}"),
                &p0,
                &analytic,
                |v| {
                    let mut s2 = trainable.cast::<f64>();
                    s2.get_mut(name).unwrap().data = v.to_vec();
                    loss_of(&s2)
                },
                &mut rng,
                2,
            ) {
                return Some(err);
            }
        }
        let _ = &mut trainable;
    }
    None
}

pub fn grad_suite() -> SuiteReport {
    let t0 = Instant::now();
    let properties = vec![
        prop("conv3d backward matches central differences", grad_conv3d(100), "100 instances".into()),
        prop("dwsep backward matches central differences", grad_dwsep(100), "100 instances".into()),
        prop("group_norm backward matches central differences", grad_group_norm(100), "100 instances".into()),
        prop("activation backward matches central differences", grad_activation(100), "100 instances".into()),
        prop(
            "rearrangement gradients are the inverse rearrangements",
            grad_rearrangements(100),
            "100 instances x 4 ops".into(),
        ),
        prop("projection head backward matches central differences", grad_projection_head(100), "100 instances".into()),
        prop("distill_loss gradients match central differences", grad_distill_loss(100), "100 instances".into()),
        prop("total_loss gradient matches central differences", grad_total_loss(100), "100 instances".into()),
        prop(
            "end-to-end decoder+loss gradients match central differences",
            grad_end_to_end(12),
            "12 tiny end-to-end instances".into(),
        ),
    ];
    SuiteReport { suite: "grad".into(), properties, elapsed_ms: t0.elapsed().as_millis() }
}

pub fn all_suites() -> Vec<SuiteReport> {
    vec![upsample_suite(), dwsep_suite(), grad_suite()]
}
