//! `vaed` — batch front end for the video VAE decoder engine.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, files, shapes),
//! 2 runtime error (failed verification suite, divergence).

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};

use vaed_core::decoder::{self, DecoderConfig};
use vaed_core::distill::{self, DistillConfig};
use vaed_core::error::Error;
use vaed_core::metrics::MetricReport;
use vaed_core::upsample::UpsampleFactors;
use vaed_core::weights::WeightStore;
use vaed_core::{bench, verify, Result, Tensor5f};

#[derive(Parser)]
#[command(
    name = "vaed",
    version,
    about = "Mobile-oriented video VAE decoder engine",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decode a latent tensor (.tvt) to a video tensor
    Decode(DecodeArgs),
    /// Per-block decode latency profile
    Bench(BenchArgs),
    /// Compare upsampling operators on one shape
    BenchOps(BenchOpsArgs),
    /// Run the oracle verification suites
    Verify(VerifyArgs),
    /// Parameter accounting for a decoder config
    Params(ParamsArgs),
    /// Separable-replacement parameter sweep
    Sweep(SweepArgs),
    /// Toy-scale distillation training run
    DistillToy(DistillToyArgs),
    /// PSNR/SSIM between two video tensors
    Metrics(MetricsArgs),
    /// Dump a TVWD container's entry table
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Preset name (8x32, 4x32, 4x8) or path to a JSON config file
    #[arg(long, default_value = "8x32")]
    config: String,
    /// Override the latent channel count
    #[arg(long)]
    latent_channels: Option<usize>,
    /// Override the GroupNorm group count
    #[arg(long)]
    norm_groups: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<DecoderConfig> {
        let mut cfg = if Path::new(&self.config).exists() {
            DecoderConfig::load(&self.config)?
        } else {
            decoder::preset(&self.config)?
        };
        if let Some(c) = self.latent_channels {
            cfg.latent_channels = c;
        }
        if let Some(g) = self.norm_groups {
            cfg.norm_groups = g;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// TVWD weight store
    #[arg(long)]
    weights: PathBuf,
    /// Latent tensor (.tvt)
    #[arg(long)]
    latent: PathBuf,
    /// Output video tensor (.tvt)
    #[arg(long)]
    out: PathBuf,
    /// Also export raw RGB24 frames (with a JSON sidecar)
    #[arg(long)]
    raw_rgb: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// TVWD weight store; seeded random weights when omitted
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Latent grid as T,H,W
    #[arg(long, default_value = "3,8,8", value_parser = parse_triple)]
    latent: (usize, usize, usize),
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the block table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchOpsArgs {
    /// Input shape as N,C,T,H,W
    #[arg(long, default_value = "1,1024,3,8,8", value_parser = parse_shape5)]
    shape: [usize; 5],
    #[arg(long, default_value_t = 2)]
    rt: usize,
    #[arg(long, default_value_t = 2)]
    rs: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// upsample | dwsep | grad | all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Last block to replace (mid, up_0, …)
    #[arg(long)]
    upto: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DistillToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    steps: u64,
    /// Disable the feature-alignment loss (baseline run)
    #[arg(long)]
    no_distill: bool,
    #[arg(long, default_value_t = 2)]
    batch_size: usize,
    /// Frames per synthetic video (1 + multiple of d_t)
    #[arg(long, default_value_t = 17)]
    frames: usize,
    /// Square frame size in pixels
    #[arg(long, default_value_t = 32)]
    px: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    /// Teacher pre-training budget before freezing
    #[arg(long, default_value_t = 120)]
    pretrain_steps: u64,
    /// Where the CSV log and checkpoint go
    #[arg(long, default_value = "distill-out")]
    out_dir: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MetricsArgs {
    /// Reference video tensor (.tvt)
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Test video tensor (.tvt)
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    max_val: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InspectArgs {
    file: PathBuf,
    #[arg(long)]
    json: bool,
}

fn parse_triple(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(format!("expected T,H,W; got {s:?}")),
    }
}

fn parse_shape5(s: &str) -> std::result::Result<[usize; 5], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected N,C,T,H,W; got {s:?}"))
}

fn emit_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_decode(args: &DecodeArgs) -> Result<i32> {
    let cfg = args.config.load()?;
    let store = WeightStore::load(&args.weights)?;
    let report = decoder::validate_store(&store, &cfg)?;
    if !report.is_empty() {
        eprintln!("{report}");
        return Err(Error::Validation("weight store does not match config".into()));
    }
    let latent = WeightStore::load_single(&args.latent)?;
    let expected = cfg.video_shape_for(latent.shape())?;
    let (video, _features) = decoder::graph::decoder_forward(&latent, &cfg, &store)?;
    debug_assert_eq!(video.shape(), expected);
    WeightStore::save_single(&video, &args.out)?;
    if let Some(raw) = &args.raw_rgb {
        export_raw_rgb(&video, raw)?;
    }
    #[derive(Serialize)]
    struct DecodeSummary<'a> {
        out: &'a Path,
        video_shape: [usize; 5],
    }
    if args.json {
        emit_json(&DecodeSummary { out: &args.out, video_shape: video.shape() })?;
    } else {
        println!(
            "decoded {:?} -> {:?} (shape {:?})",
            args.latent, args.out, video.shape()
        );
    }
    Ok(0)
}

/// RGB24 export: frames concatenated, each row-major H×W×RGB, values
/// clamped to [0,1] then scaled to [0,255]. A JSON sidecar records extents.
fn export_raw_rgb(video: &Tensor5f, path: &Path) -> Result<()> {
    let [n, c, t, h, w] = video.shape();
    if n != 1 {
        return Err(Error::Validation(format!("raw RGB export needs batch 1, got {n}")));
    }
    if c != 3 {
        return Err(Error::Validation(format!("raw RGB export needs 3 channels, got {c}")));
    }
    let mut bytes = Vec::with_capacity(t * h * w * 3);
    for ti in 0..t {
        for hi in 0..h {
            for wi in 0..w {
                for ci in 0..3 {
                    let v = video.at(0, ci, ti, hi, wi).clamp(0.0, 1.0);
                    bytes.push((v * 255.0).round() as u8);
                }
            }
        }
    }
    std::fs::write(path, &bytes)?;
    #[derive(Serialize)]
    struct Sidecar {
        frames: usize,
        height: usize,
        width: usize,
    }
    let sidecar = serde_json::to_string_pretty(&Sidecar { frames: t, height: h, width: w })?;
    std::fs::write(path.with_extension("json"), sidecar)?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let cfg = args.config.load()?;
    let store = match &args.weights {
        Some(p) => WeightStore::load(p)?,
        None => decoder::init_weights::<f32>(&cfg, args.seed)?,
    };
    let (t, h, w) = args.latent;
    let opts = bench::BenchOptions {
        warmup: args.warmup,
        repeats: args.repeats,
        threads: args.threads,
    };
    let report = bench::profile_decoder(
        &cfg,
        &store,
        [args.batch, cfg.latent_channels, t, h, w],
        &opts,
    )?;
    if let Some(csv) = &args.csv {
        let mut f = std::fs::File::create(csv)?;
        bench::write_block_report_csv(&report, &mut f)?;
    }
    if args.json {
        emit_json(&report)?;
    } else {
        println!("{:<10} {:>12} {:>12} {:>12} {:>8}", "block", "mean", "median", "p95", "share");
        for b in &report.blocks {
            println!(
                "{:<10} {:>10.0}ns {:>10}ns {:>10}ns {:>7.2}%",
                b.name, b.mean_ns, b.median_ns, b.p95_ns, b.share_pct
            );
        }
        println!(
            "end-to-end {:.3} ms | instrumented {:.3} ms | {} frames | {:.2} FPS | threads {}",
            report.end_to_end_ns / 1e6,
            report.instrumented_ns / 1e6,
            report.output_frames,
            report.fps,
            report.threads
        );
    }
    Ok(0)
}

fn cmd_bench_ops(args: &BenchOpsArgs) -> Result<i32> {
    let opts = bench::BenchOptions {
        warmup: args.warmup,
        repeats: args.repeats,
        threads: args.threads,
    };
    let report = bench::bench_upsamplers(
        args.shape,
        UpsampleFactors::new(args.rt, args.rs)?,
        &opts,
    )?;
    if let Some(csv) = &args.csv {
        let mut f = std::fs::File::create(csv)?;
        bench::write_upsampler_report_csv(&report, &mut f)?;
    }
    if args.json {
        emit_json(&report)?;
    } else {
        println!(
            "shape {:?}, r_t={}, r_s={}, warmup {}, repeats {}, threads {}",
            report.shape, report.r_t, report.r_s, report.warmup, report.repeats, report.threads
        );
        for r in &report.rows {
            println!(
                "{:<24} mean {:>10.0}ns median {:>10}ns p95 {:>10}ns",
                r.name, r.mean_ns, r.median_ns, r.p95_ns
            );
        }
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let suites = match args.suite.as_str() {
        "upsample" => vec![verify::upsample_suite()],
        "dwsep" => vec![verify::dwsep_suite()],
        "grad" => vec![verify::grad_suite()],
        "all" => verify::all_suites(),
        other => {
            return Err(Error::Config(format!(
                "unknown suite {other:?}; expected upsample, dwsep, grad or all"
            )))
        }
    };
    if args.json {
        emit_json(&suites)?;
    } else {
        for s in &suites {
            for p in &s.properties {
                let mark = if p.pass { "PASS" } else { "FAIL" };
                println!("[{mark}] {}::{} — {}", s.suite, p.name, p.details);
            }
            println!("suite {} finished in {} ms", s.suite, s.elapsed_ms);
        }
    }
    let all_pass = suites.iter().all(|s| s.all_pass());
    if !all_pass {
        eprintln!("verification failed");
        return Ok(2);
    }
    Ok(0)
}

fn cmd_params(args: &ParamsArgs) -> Result<i32> {
    let cfg = args.config.load()?;
    let report = decoder::count_params(&cfg)?;
    if args.json {
        emit_json(&report)?;
    } else {
        for (name, count) in &report.per_block {
            println!("{name:<8} {count:>12}");
        }
        println!("{:<8} {:>12}  ({:.2} M)", "total", report.total, report.total as f64 / 1e6);
    }
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let cfg = args.config.load()?;
    let rows = decoder::redundancy_sweep(&cfg, &args.upto)?;
    if args.json {
        emit_json(&rows)?;
    } else {
        println!("{:<12} {:>14}", "replace_upto", "params");
        for r in &rows {
            println!("{:<12} {:>14}", r.replace_upto, r.params);
        }
    }
    Ok(0)
}

fn toy_student_config() -> DecoderConfig {
    decoder::tiny_config(4, &[8, 8, 8, 8], &[(2, 2), (2, 2), (1, 2)], 4)
}

fn toy_teacher_config() -> DecoderConfig {
    decoder::tiny_config(4, &[16, 16, 16, 16], &[(2, 2), (2, 2), (1, 2)], 4)
}

fn cmd_distill_toy(args: &DistillToyArgs) -> Result<i32> {
    let student_cfg = toy_student_config();
    let teacher_cfg = toy_teacher_config();
    let (d_t, d_h, _) = student_cfg.factors;
    if args.frames == 0 || (args.frames - 1) % d_t != 0 || args.px % d_h != 0 {
        return Err(Error::Config(format!(
            "frames must be 1 + multiple of {d_t} and px a multiple of {d_h}"
        )));
    }
    let mut cfg = DistillConfig {
        seed: args.seed,
        steps: args.steps,
        batch_size: args.batch_size,
        lr: args.lr,
        data: distill::SyntheticDataConfig {
            frames: args.frames,
            height: args.px,
            width: args.px,
            dataset_size: 8,
        },
        teacher_pretrain_steps: args.pretrain_steps,
        ..Default::default()
    };
    if args.no_distill {
        cfg.weights.alpha_distill = 0.0;
    }
    let teacher = distill::ToyTeacher::<f32>::build(
        &teacher_cfg,
        &cfg.data,
        args.seed ^ 0x7463_6872,
        cfg.teacher_pretrain_steps,
        cfg.teacher_pretrain_lr,
    )?;
    let outcome = distill::train_toy(&cfg, &student_cfg, &teacher, Default::default())?;

    std::fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("log.csv");
    distill::write_log_csv(&outcome.log, &log_path)?;
    let ckpt_path = args.out_dir.join("student.tvwd");
    outcome.student_weights().save(&ckpt_path)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        steps: u64,
        distill_enabled: bool,
        final_l1: Option<f64>,
        final_eval_psnr: Option<f64>,
        log: &'a Path,
        checkpoint: &'a Path,
    }
    let summary = Summary {
        steps: args.steps,
        distill_enabled: !args.no_distill,
        final_l1: outcome.log.last().map(|r| r.l1),
        final_eval_psnr: outcome.log.last().map(|r| r.eval_psnr),
        log: &log_path,
        checkpoint: &ckpt_path,
    };
    if args.json {
        emit_json(&summary)?;
    } else {
        println!(
            "ran {} steps (distill {}); final l1 {:?}, eval PSNR {:?}",
            summary.steps,
            if summary.distill_enabled { "on" } else { "off" },
            summary.final_l1,
            summary.final_eval_psnr
        );
        println!("log: {:?}, checkpoint: {:?}", summary.log, summary.checkpoint);
    }
    Ok(0)
}

fn cmd_metrics(args: &MetricsArgs) -> Result<i32> {
    let a = WeightStore::load_single(&args.reference)?;
    let b = WeightStore::load_single(&args.test)?;
    let report = MetricReport::compute(&a, &b, args.max_val)?;
    if args.json {
        emit_json(&report)?;
    } else {
        println!("psnr: {}", report.psnr);
        println!("ssim: {:.6}", report.ssim);
        for (i, (p, s)) in report
            .per_frame_psnr
            .iter()
            .zip(&report.per_frame_ssim)
            .enumerate()
        {
            println!("frame {i:>3}: psnr {p}, ssim {s:.6}");
        }
    }
    Ok(0)
}

fn cmd_inspect(args: &InspectArgs) -> Result<i32> {
    let store = WeightStore::load(&args.file)?;
    #[derive(Serialize)]
    struct Entry<'a> {
        name: &'a str,
        dtype: &'static str,
        shape: &'a [usize],
        elements: usize,
    }
    let entries: Vec<Entry> = store
        .iter()
        .map(|(name, e)| Entry { name, dtype: "f32", shape: &e.dims, elements: e.data.len() })
        .collect();
    if args.json {
        emit_json(&entries)?;
    } else {
        for e in &entries {
            println!("{:<40} f32 {:?} ({} elements)", e.name, e.shape, e.elements);
        }
        println!("{} entries, {} elements total", store.len(), store.total_elements());
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Decode(a) => cmd_decode(&a),
        Cmd::Bench(a) => cmd_bench(&a),
        Cmd::BenchOps(a) => cmd_bench_ops(&a),
        Cmd::Verify(a) => cmd_verify(&a),
        Cmd::Params(a) => cmd_params(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::DistillToy(a) => cmd_distill_toy(&a),
        Cmd::Metrics(a) => cmd_metrics(&a),
        Cmd::Inspect(a) => cmd_inspect(&a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version print to stdout and exit 0; usage problems are
            // validation errors (exit 1).
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_user_error() { 1 } else { 2 });
        }
    }
}
