//! End-to-end CLI tests against the built binary.

use std::path::Path;
use std::process::{Command, Output};

use vaed_core::decoder::{self, tiny_config, DecoderConfig};
use vaed_core::weights::WeightStore;
use vaed_core::Tensor5;

fn vaed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vaed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_fixture(dir: &Path) -> (DecoderConfig, String, String) {
    let cfg = tiny_config(4, &[8, 8], &[(2, 2)], 2);
    let cfg_path = dir.join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let store = decoder::init_weights::<f32>(&cfg, 7).unwrap();
    let weights_path = dir.join("w.tvwd");
    store.save(&weights_path).unwrap();
    (
        cfg,
        cfg_path.to_string_lossy().into_owned(),
        weights_path.to_string_lossy().into_owned(),
    )
}

fn write_latent(dir: &Path, shape: vaed_core::Shape5, seed: u64) -> String {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let latent = Tensor5::from_fn(shape, |_, _, _, _, _| rng.random_range(-1.0f32..1.0)).unwrap();
    let p = dir.join("latent.tvt");
    WeightStore::save_single(&latent, &p).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn decode_happy_path_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (_cfg, cfg_path, weights_path) = write_fixture(dir.path());
    let latent_path = write_latent(dir.path(), [1, 4, 2, 3, 3], 1);
    let out_a = dir.path().join("a.tvt");
    let out_b = dir.path().join("b.tvt");

    for out in [&out_a, &out_b] {
        let r = vaed(&[
            "decode",
            "--config",
            &cfg_path,
            "--weights",
            &weights_path,
            "--latent",
            &latent_path,
            "--out",
            &out.to_string_lossy(),
        ]);
        assert!(r.status.success(), "stderr: {}", stderr(&r));
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "decode is not bitwise deterministic");

    let video = WeightStore::load_single(&out_a).unwrap();
    // d_t = d_s = 2 for the fixture: (1, 3, 2*(2-1)+1, 6, 6).
    assert_eq!(video.shape(), [1, 3, 3, 6, 6]);
}

#[test]
fn decode_rejects_wrong_channel_latent() {
    let dir = tempfile::tempdir().unwrap();
    let (_cfg, cfg_path, weights_path) = write_fixture(dir.path());
    let latent_path = write_latent(dir.path(), [1, 3, 2, 3, 3], 2);
    let r = vaed(&[
        "decode",
        "--config",
        &cfg_path,
        "--weights",
        &weights_path,
        "--latent",
        &latent_path,
        "--out",
        &dir.path().join("x.tvt").to_string_lossy(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let err = stderr(&r);
    assert!(err.contains("channels"), "message should name the extent: {err}");
}

#[test]
fn decode_exports_raw_rgb_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let (_cfg, cfg_path, weights_path) = write_fixture(dir.path());
    let latent_path = write_latent(dir.path(), [1, 4, 2, 3, 3], 3);
    let rgb = dir.path().join("frames.rgb");
    let r = vaed(&[
        "decode",
        "--config",
        &cfg_path,
        "--weights",
        &weights_path,
        "--latent",
        &latent_path,
        "--out",
        &dir.path().join("v.tvt").to_string_lossy(),
        "--raw-rgb",
        &rgb.to_string_lossy(),
    ]);
    assert!(r.status.success(), "stderr: {}", stderr(&r));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rgb.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["frames"], 3);
    assert_eq!(sidecar["height"], 6);
    assert_eq!(sidecar["width"], 6);
    let bytes = std::fs::read(&rgb).unwrap();
    assert_eq!(bytes.len(), 3 * 6 * 6 * 3);
}

#[test]
fn params_json_total_matches_sum() {
    let r = vaed(&["params", "--config", "8x32", "--json"]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    let total = v["total"].as_u64().unwrap();
    let sum: u64 = v["per_block"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| row[1].as_u64().unwrap())
        .sum();
    assert_eq!(total, sum);
}

#[test]
fn sweep_is_monotone() {
    let r = vaed(&["sweep", "--config", "8x32", "--upto", "up_3", "--json"]);
    assert!(r.status.success());
    let rows: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    let params: Vec<u64> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["params"].as_u64().unwrap())
        .collect();
    assert!(params.windows(2).all(|p| p[1] < p[0]), "{params:?}");

    let r = vaed(&["sweep", "--config", "8x32", "--upto", "nonsense"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn metrics_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let v = Tensor5::from_fn([1, 3, 2, 16, 16], |_, _, _, _, _| rng.random_range(0.0f32..1.0))
        .unwrap();
    let p = dir.path().join("v.tvt");
    WeightStore::save_single(&v, &p).unwrap();
    let r = vaed(&[
        "metrics",
        "--ref",
        &p.to_string_lossy(),
        "--test",
        &p.to_string_lossy(),
        "--json",
    ]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert_eq!(v["psnr"]["kind"], "identical");
    assert_eq!(v["ssim"].as_f64().unwrap(), 1.0);
}

#[test]
fn inspect_lists_entries() {
    let dir = tempfile::tempdir().unwrap();
    let (_c, _cfg_path, weights_path) = write_fixture(dir.path());
    let r = vaed(&["inspect", &weights_path, "--json"]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert!(!v.as_array().unwrap().is_empty());

    // Corrupt magic -> validation exit code 1, structured message.
    let bad = dir.path().join("bad.tvwd");
    let mut bytes = std::fs::read(&weights_path).unwrap();
    bytes[0] = b'Z';
    std::fs::write(&bad, &bytes).unwrap();
    let r = vaed(&["inspect", &bad.to_string_lossy()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("magic"));
}

#[test]
fn verify_fast_suites_pass() {
    let r = vaed(&["verify", "--suite", "upsample"]);
    assert!(r.status.success(), "stderr: {}", stderr(&r));
    assert!(stdout(&r).contains("[PASS]"));

    let r = vaed(&["verify", "--suite", "bogus"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn bench_ops_json_has_three_rows() {
    let r = vaed(&[
        "bench-ops",
        "--shape",
        "1,32,2,4,4",
        "--warmup",
        "1",
        "--repeats",
        "3",
        "--json",
    ]);
    assert!(r.status.success(), "stderr: {}", stderr(&r));
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert_eq!(v["threads"], 1);
}

#[test]
fn bench_decoder_json_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (_cfg, cfg_path, weights_path) = write_fixture(dir.path());
    let r = vaed(&[
        "bench",
        "--config",
        &cfg_path,
        "--weights",
        &weights_path,
        "--latent",
        "2,3,3",
        "--warmup",
        "1",
        "--repeats",
        "3",
        "--json",
    ]);
    assert!(r.status.success(), "stderr: {}", stderr(&r));
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert!(v["fps"].as_f64().unwrap() > 0.0);
    assert_eq!(v["blocks"].as_array().unwrap().len(), 3);
}

#[test]
fn distill_toy_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let r = vaed(&[
        "distill-toy",
        "--seed",
        "3",
        "--steps",
        "2",
        "--frames",
        "9",
        "--px",
        "16",
        "--pretrain-steps",
        "2",
        "--out-dir",
        &out_dir.to_string_lossy(),
        "--json",
    ]);
    assert!(r.status.success(), "stderr: {}", stderr(&r));
    let log = std::fs::read_to_string(out_dir.join("log.csv")).unwrap();
    assert!(log.starts_with("step,l1,l_distill,l_kl,total,eval_psnr"));
    assert_eq!(log.lines().count(), 3);
    let store = WeightStore::load(out_dir.join("student.tvwd")).unwrap();
    assert!(store.names().all(|n| !n.starts_with("proj/")));
}

#[test]
fn unknown_flags_are_rejected() {
    let r = vaed(&["params", "--config", "8x32", "--frobnicate"]);
    assert_eq!(r.status.code(), Some(1));
    let r = vaed(&["--help"]);
    assert_eq!(r.status.code(), Some(0));
}
