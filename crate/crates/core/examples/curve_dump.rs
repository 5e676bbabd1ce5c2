use vaed_core::decoder::tiny_config;
use vaed_core::distill::data::batch;
use vaed_core::distill::loss::l1_loss;
use vaed_core::distill::{train_toy, DistillConfig, SyntheticDataConfig, ToyTeacher};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let latent_c: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let tw: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(12);
    let data = SyntheticDataConfig { frames: 9, height: 12, width: 12, dataset_size: 64 };
    let ups = [(2usize, 2usize), (2, 2)];
    let student = tiny_config(latent_c, &[8, 8, 8], &ups, 4);
    let teacher_cfg = tiny_config(latent_c, &[tw, tw, tw], &ups, 4);
    let t0 = std::time::Instant::now();
    let teacher = ToyTeacher::<f32>::build(&teacher_cfg, &data, 1000, pre_steps, 5e-4).unwrap();

    let v = batch::<f32>(&data, 0, 0, 8);
    let stats = teacher.encode(&v).unwrap();
    let (recon, _) = teacher.decode(&stats.mu).unwrap();
    println!("# teacher L1 after {pre_steps}: {:.4} ({:.0}s) latent_c={latent_c} tw={tw}",
        l1_loss(&v, &recon).unwrap().0, t0.elapsed().as_secs_f64());

    for alpha in [0.0f64, 1.0] {
        let mut cfg = DistillConfig {
            align_blocks: vec!["mid".into(), "up_0".into(), "up_1".into()],
            data, steps, batch_size: 2, lr, seed: 0,
            ..Default::default()
        };
        cfg.weights.alpha_distill = alpha;
        let t1 = std::time::Instant::now();
        let out = train_toy(&cfg, &student, &teacher, Default::default()).unwrap();
        for r in out.log.iter().step_by(20) {
            println!("a={alpha} step={} l1={:.4} distill={:.4} psnr={:.2}", r.step, r.l1, r.distill, r.eval_psnr);
        }
        let last = out.log.last().unwrap();
        println!("a={alpha} FINAL step={} l1={:.4} psnr={:.2} ({:.0}s)", last.step, last.l1, last.eval_psnr, t1.elapsed().as_secs_f64());
    }
}
