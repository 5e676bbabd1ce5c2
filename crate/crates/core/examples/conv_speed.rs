use std::time::Instant;
use vaed_core::ops::{conv3d, Conv3dParams, PadSpec};
use vaed_core::Tensor5;

fn main() {
    for (c, t, hw) in [(16usize, 17usize, 32usize), (16, 17, 16), (8, 9, 16)] {
        let x = Tensor5::<f32>::full([2, c, t, hw, hw], 0.5).unwrap();
        let w = Tensor5::<f32>::full([c, c, 3, 3, 3], 0.01).unwrap();
        let p = Conv3dParams::new(w, Some(vec![0.0; c]), PadSpec::same_causal((3, 3, 3))).unwrap();
        let t0 = Instant::now();
        let mut reps = 0;
        while t0.elapsed().as_secs_f64() < 1.0 {
            std::hint::black_box(conv3d(&x, &p).unwrap());
            reps += 1;
        }
        let el = t0.elapsed().as_secs_f64() / reps as f64;
        let macs = 2.0 * (c * c * 27 * t * hw * hw) as f64;
        println!("c={c} t={t} hw={hw}: {:.1} ms/conv, {:.2} GFLOP/s ({reps} reps)", el * 1e3, macs / el / 1e9);
    }
}
