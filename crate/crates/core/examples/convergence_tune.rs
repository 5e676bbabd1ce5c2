use std::time::Instant;
use vaed_core::decoder::tiny_config;
use vaed_core::distill::{paired_convergence, DistillConfig, SyntheticDataConfig, ToyTeacher};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let data = SyntheticDataConfig { frames: 9, height: 16, width: 16, dataset_size: 6 };
    let student = tiny_config(4, &[8, 8, 8], &[(2, 2), (2, 2)], 4);
    let teacher_cfg = tiny_config(4, &[16, 16, 16], &[(2, 2), (2, 2)], 4);

    for seed in 0..5u64 {
        let t0 = Instant::now();
        let teacher = ToyTeacher::<f32>::build(&teacher_cfg, &data, 1000 + seed, 150, 3e-3).unwrap();
        let t_teacher = t0.elapsed().as_secs_f64();
        let cfg = DistillConfig {
            align_blocks: vec!["mid".into(), "up_0".into(), "up_1".into()],
            data,
            steps,
            batch_size: 2,
            lr,
            seed,
            ..Default::default()
        };
        let t1 = Instant::now();
        let pair = paired_convergence(&cfg, &student, &teacher).unwrap();
        println!(
            "seed {seed}: tau={:.4} base_steps={} dist_steps={:?} base_psnr={:.2} dist_psnr={:.2} (teacher {:.0}s, pair {:.0}s)",
            pair.tau, pair.baseline_steps_to_tau, pair.distilled_steps_to_tau,
            pair.baseline_final_psnr, pair.distilled_final_psnr,
            t_teacher, t1.elapsed().as_secs_f64()
        );
    }
}
