//! Quick wall-clock timings for the hot kernels (criterion comes later).
use std::time::Instant;

use amcs_core::measurement::BLOCK_LEN;
use amcs_core::reconnet::{backward_full, forward_adaptive, init_params, ArchConfig, InitMode};
use amcs_core::rng::SeededRng;
use amcs_core::tensor::{conv2d_same, conv2d_same_backward, Tensor};
use amcs_core::MeasurementKind;

fn main() {
    let mut rng = SeededRng::new(1);
    // conv1-like: 33x33x1 -> 64ch 11x11
    let mut input = Tensor::zeros(vec![33, 33, 1]);
    rng.fill_normal(input.data_mut(), 1.0);
    let mut kernels = Tensor::zeros(vec![11, 11, 1, 64]);
    rng.fill_normal(kernels.data_mut(), 0.05);
    let mut bias = Tensor::zeros(vec![64]);
    rng.fill_normal(bias.data_mut(), 0.1);

    let reps = 200;
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(conv2d_same(&input, &kernels, &bias).unwrap());
    }
    let fwd = t.elapsed().as_secs_f64() / reps as f64;
    println!("conv1 fwd: {:.3} ms ({:.1} GFLOP/s)", fwd * 1e3, 2.0 * 8.43e6 / fwd / 1e9);

    let mut upstream = Tensor::zeros(vec![33, 33, 64]);
    rng.fill_normal(upstream.data_mut(), 1.0);
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(conv2d_same_backward(&input, &kernels, &upstream).unwrap());
    }
    let bwd = t.elapsed().as_secs_f64() / reps as f64;
    println!("conv1 bwd: {:.3} ms ({:.1} GFLOP/s)", bwd * 1e3, 2.0 * 16.9e6 / bwd / 1e9);

    // conv3-like: 33x33x32 -> 1ch 7x7
    let mut input3 = Tensor::zeros(vec![33, 33, 32]);
    rng.fill_normal(input3.data_mut(), 1.0);
    let mut kernels3 = Tensor::zeros(vec![7, 7, 32, 1]);
    rng.fill_normal(kernels3.data_mut(), 0.05);
    let bias3 = Tensor::zeros(vec![1]);
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(conv2d_same(&input3, &kernels3, &bias3).unwrap());
    }
    let f3 = t.elapsed().as_secs_f64() / reps as f64;
    println!("conv3 fwd: {:.3} ms ({:.1} GFLOP/s)", f3 * 1e3, 2.0 * 1.71e6 / f3 / 1e9);

    // full sample
    let params = init_params(
        &ArchConfig::standard(), MeasurementKind::Adaptive, 0.25, 272,
        InitMode::Gaussian { sigma: 0.05 }, 3, None,
    ).unwrap();
    let mut x = vec![0.0f32; BLOCK_LEN];
    rng.fill_normal(&mut x, 0.3);
    let t = Instant::now();
    let reps2 = 50;
    for _ in 0..reps2 {
        let (out, cache) = forward_adaptive(&params, &x).unwrap();
        let upstream = out.map(|v| 2.0 * v);
        std::hint::black_box(backward_full(&params, &cache, &upstream).unwrap());
    }
    let full = t.elapsed().as_secs_f64() / reps2 as f64;
    println!("sample fwd+bwd: {:.2} ms ({:.1} GFLOP/s @152Mflop)", full * 1e3, 152e6 / full / 1e9);
}
