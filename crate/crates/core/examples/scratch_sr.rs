// scratch: normals-preset ablation margins
use cxlab::gradients::{gaussian_blur, BlurKernel};
use cxlab::optimize::{optimize_image, Algorithm, ObjectiveConfig, OptimizerConfig};
use cxlab::ImageGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn texture(h: usize, w: usize, seed: u64) -> ImageGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..h * w)
        .map(|i| {
            let base = 0.5 + 0.3 * ((i % w) as f64 * 0.7).sin() * ((i / w) as f64 * 0.4).cos();
            (base + 0.2 * rng.gen::<f64>()).clamp(0.0, 1.0)
        })
        .collect();
    ImageGrid::new(data, h, w, 1).unwrap()
}

fn main() {
    let y = texture(48, 48, 2);
    let kernel = BlurKernel::gaussian(21, 3.0).unwrap();
    let blurred = gaussian_blur(&y, &kernel).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let x0_data: Vec<f64> = blurred
        .as_flat()
        .iter()
        .map(|v| (v + 0.1 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0))
        .collect();
    let x0 = ImageGrid::new(x0_data, 48, 48, 1).unwrap();

    for &iters in &[300usize, 500] {
        let t0 = Instant::now();
        let run = |lambda_l1: f64| {
            let mut cfg = ObjectiveConfig::<f64>::normals();
            cfg.lambda_l1 = lambda_l1;
            let opt = OptimizerConfig::new(Algorithm::Adam, 0.02, iters)
                .unwrap()
                .with_trace_every(iters);
            let (_, trace) = optimize_image(&x0, &y, &cfg, &opt, 20, 0).unwrap();
            let last = trace.rows.last().unwrap();
            (last.l1, last.cx)
        };
        let (l1_with, cx_with) = run(1.0);
        let (l1_without, cx_without) = run(0.0);
        println!(
            "iters={iters}: l1 with={l1_with:.4} without={l1_without:.4} (lower with? {}); cx with={cx_with:.4} without={cx_without:.4} rel diff={:.3}; {:.1}s",
            l1_with < l1_without,
            (cx_with - cx_without).abs() / cx_with.abs().max(cx_without.abs()),
            t0.elapsed().as_secs_f64()
        );
    }
}
