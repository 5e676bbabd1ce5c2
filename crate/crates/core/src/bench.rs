//! Wall-clock micro-benchmarks: per-block decode latency decomposition and
//! the upsampler comparison. Timing never changes computed outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::time::Instant;

use crate::decoder::config::DecoderConfig;
use crate::decoder::graph::CompiledDecoder;
use crate::error::{Error, Result};
use crate::tensor::Tensor5;
use crate::upsample::{decoupled_upsample, interpolate_3d, pixel_shuffle_3d, InterpMode, UpsampleFactors};
use crate::weights::WeightStore;
use crate::Shape5;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub repeats: usize,
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { warmup: 5, repeats: 20, threads: 1 }
    }
}

impl BenchOptions {
    fn validate(&self) -> Result<()> {
        if self.warmup < 1 {
            return Err(Error::Config("warmup must be >= 1".into()));
        }
        if self.repeats < 3 {
            return Err(Error::Config("repeats must be >= 3".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

fn stats_ns(samples: &mut [u64]) -> (f64, u64, u64) {
    samples.sort_unstable();
    let mean = samples.iter().sum::<u64>() as f64 / samples.len() as f64;
    let median = samples[samples.len() / 2];
    let p95_idx = ((samples.len() as f64) * 0.95).ceil() as usize - 1;
    (mean, median, samples[p95_idx.min(samples.len() - 1)])
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockTiming {
    pub name: String,
    pub mean_ns: f64,
    pub median_ns: u64,
    pub p95_ns: u64,
    /// Share of the instrumented total, in percent.
    pub share_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockTimingReport {
    pub blocks: Vec<BlockTiming>,
    /// Mean wall time of one whole decode call.
    pub end_to_end_ns: f64,
    /// Sum of per-block mean times.
    pub instrumented_ns: f64,
    pub output_frames: usize,
    /// Decoded output frames per end-to-end second (batch 1 framing).
    pub fps: f64,
    pub warmup: usize,
    pub repeats: usize,
    pub threads: usize,
}

/// Time a decode per block: `warmup` untimed runs, then `repeats` timed runs
/// on a monotonic clock, block boundaries instrumented inside the forward.
pub fn profile_decoder(
    cfg: &DecoderConfig,
    store: &WeightStore<f32>,
    latent_shape: Shape5,
    opts: &BenchOptions,
) -> Result<BlockTimingReport> {
    opts.validate()?;
    let decoder = CompiledDecoder::build(cfg, store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6265_6e63);
    let latent = Tensor5::from_fn(latent_shape, |_, _, _, _, _| rng.random_range(-1.0f32..1.0))?;
    let pool = opts.pool()?;

    pool.install(|| -> Result<BlockTimingReport> {
        let mut block_names: Vec<String> = Vec::new();
        let mut per_block: Vec<Vec<u64>> = Vec::new();
        let mut end_to_end: Vec<u64> = Vec::with_capacity(opts.repeats);
        let mut output_frames = 0usize;

        for _ in 0..opts.warmup {
            let _ = decoder.forward_timed(&latent)?;
        }
        for _ in 0..opts.repeats {
            let t0 = Instant::now();
            let (video, timings) = decoder.forward_timed(&latent)?;
            end_to_end.push(t0.elapsed().as_nanos() as u64);
            output_frames = video.shape()[2];
            if block_names.is_empty() {
                block_names = timings.iter().map(|(n, _)| n.clone()).collect();
                per_block = vec![Vec::with_capacity(opts.repeats); timings.len()];
            }
            for (i, (_, d)) in timings.iter().enumerate() {
                per_block[i].push(d.as_nanos() as u64);
            }
        }

        let mut blocks: Vec<BlockTiming> = block_names
            .into_iter()
            .zip(per_block.iter_mut())
            .map(|(name, samples)| {
                let (mean, median, p95) = stats_ns(samples);
                BlockTiming { name, mean_ns: mean, median_ns: median, p95_ns: p95, share_pct: 0.0 }
            })
            .collect();
        let instrumented: f64 = blocks.iter().map(|b| b.mean_ns).sum();
        for b in &mut blocks {
            b.share_pct = 100.0 * b.mean_ns / instrumented;
        }
        let (e2e_mean, _, _) = stats_ns(&mut end_to_end);
        Ok(BlockTimingReport {
            blocks,
            end_to_end_ns: e2e_mean,
            instrumented_ns: instrumented,
            output_frames,
            fps: output_frames as f64 / (e2e_mean / 1e9),
            warmup: opts.warmup,
            repeats: opts.repeats,
            threads: opts.threads,
        })
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UpsamplerRow {
    pub name: String,
    pub mean_ns: f64,
    pub median_ns: u64,
    pub p95_ns: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpsamplerBenchReport {
    pub shape: Shape5,
    pub r_t: usize,
    pub r_s: usize,
    pub rows: Vec<UpsamplerRow>,
    pub warmup: usize,
    pub repeats: usize,
    pub threads: usize,
}

fn time_op(
    opts: &BenchOptions,
    mut f: impl FnMut() -> Result<()>,
) -> Result<(f64, u64, u64)> {
    for _ in 0..opts.warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let t0 = Instant::now();
        f()?;
        samples.push(t0.elapsed().as_nanos() as u64);
    }
    Ok(stats_ns(&mut samples))
}

/// Compare the reference 3D pixel shuffle, the decoupled scheme, and 3D
/// interpolation on one input shape.
pub fn bench_upsamplers(
    shape: Shape5,
    factors: UpsampleFactors,
    opts: &BenchOptions,
) -> Result<UpsamplerBenchReport> {
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7570_7362);
    let x = Tensor5::from_fn(shape, |_, _, _, _, _| rng.random_range(-1.0f32..1.0))?;
    // The interpolation baseline upsamples an input that already has the
    // target channel count.
    let c_small = shape[1] / factors.channel_factor();
    let x_small = Tensor5::from_fn([shape[0], c_small.max(1), shape[2], shape[3], shape[4]],
        |_, _, _, _, _| rng.random_range(-1.0f32..1.0))?;
    let pool = opts.pool()?;

    pool.install(|| -> Result<UpsamplerBenchReport> {
        let mut rows = Vec::new();
        let (mean, median, p95) = time_op(opts, || {
            std::hint::black_box(pixel_shuffle_3d(&x, factors.r_t, factors.r_s)?);
            Ok(())
        })?;
        rows.push(UpsamplerRow { name: "pixel_shuffle_3d".into(), mean_ns: mean, median_ns: median, p95_ns: p95 });
        let (mean, median, p95) = time_op(opts, || {
            std::hint::black_box(decoupled_upsample(&x, factors)?);
            Ok(())
        })?;
        rows.push(UpsamplerRow { name: "decoupled".into(), mean_ns: mean, median_ns: median, p95_ns: p95 });
        let (mean, median, p95) = time_op(opts, || {
            std::hint::black_box(interpolate_3d(&x_small, factors, InterpMode::Trilinear)?);
            Ok(())
        })?;
        rows.push(UpsamplerRow { name: "interpolate_trilinear".into(), mean_ns: mean, median_ns: median, p95_ns: p95 });
        Ok(UpsamplerBenchReport {
            shape,
            r_t: factors.r_t,
            r_s: factors.r_s,
            rows,
            warmup: opts.warmup,
            repeats: opts.repeats,
            threads: opts.threads,
        })
    })
}

pub fn write_block_report_csv(report: &BlockTimingReport, w: &mut impl Write) -> Result<()> {
    writeln!(w, "block,mean_ns,median_ns,p95_ns,share_pct")?;
    for b in &report.blocks {
        writeln!(w, "{},{:.0},{},{},{:.3}", b.name, b.mean_ns, b.median_ns, b.p95_ns, b.share_pct)?;
    }
    writeln!(w, "end_to_end,{:.0},,,", report.end_to_end_ns)?;
    Ok(())
}

pub fn write_upsampler_report_csv(report: &UpsamplerBenchReport, w: &mut impl Write) -> Result<()> {
    writeln!(w, "op,mean_ns,median_ns,p95_ns")?;
    for r in &report.rows {
        writeln!(w, "{},{:.0},{},{}", r.name, r.mean_ns, r.median_ns, r.p95_ns)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::config::tiny_config;
    use crate::decoder::graph::init_weights;

    #[test]
    fn report_structure() {
        let cfg = tiny_config(4, &[8, 8], &[(2, 2)], 2);
        let store = init_weights::<f32>(&cfg, 1).unwrap();
        let opts = BenchOptions { warmup: 1, repeats: 3, threads: 1 };
        let r = profile_decoder(&cfg, &store, [1, 4, 2, 4, 4], &opts).unwrap();
        assert_eq!(r.blocks.len(), 3); // mid, up_0, head
        let share_sum: f64 = r.blocks.iter().map(|b| b.share_pct).sum();
        assert!((share_sum - 100.0).abs() < 1.0, "shares sum to {share_sum}");
        assert!(r.fps > 0.0);
        assert_eq!(r.output_frames, 3);
    }

    #[test]
    fn profiling_is_observationally_pure() {
        let cfg = tiny_config(4, &[8, 8], &[(2, 2)], 2);
        let store = init_weights::<f32>(&cfg, 2).unwrap();
        let dec = CompiledDecoder::build(&cfg, &store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x6265_6e63);
        let latent =
            Tensor5::from_fn([1, 4, 2, 4, 4], |_, _, _, _, _| rng.random_range(-1.0f32..1.0))
                .unwrap();
        let (plain, _) = dec.forward(&latent).unwrap();
        let (timed, _) = dec.forward_timed(&latent).unwrap();
        assert_eq!(plain, timed);
        // Profiling uses the same latent construction.
        let opts = BenchOptions { warmup: 1, repeats: 3, threads: 1 };
        profile_decoder(&cfg, &store, [1, 4, 2, 4, 4], &opts).unwrap();
        let (after, _) = dec.forward(&latent).unwrap();
        assert_eq!(plain, after);
    }

    #[test]
    fn upsampler_rows_present() {
        let opts = BenchOptions { warmup: 1, repeats: 3, threads: 1 };
        let r = bench_upsamplers(
            [1, 32, 2, 4, 4],
            UpsampleFactors { r_t: 2, r_s: 2 },
            &opts,
        )
        .unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows.iter().all(|row| row.median_ns > 0 || row.mean_ns >= 0.0));
    }

    #[test]
    fn rejects_degenerate_options() {
        let opts = BenchOptions { warmup: 0, repeats: 3, threads: 1 };
        assert!(bench_upsamplers([1, 8, 1, 2, 2], UpsampleFactors { r_t: 2, r_s: 2 }, &opts).is_err());
    }
}
