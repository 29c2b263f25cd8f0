//! Hot-path microbenchmarks: convolution kernels, LSTM sequence walk, and
//! an Adam step at realistic parameter sizes.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gait_core::layers::{lstm_sequence, Direction, LstmCell, Param};
use gait_core::rng::rng_from;
use gait_core::tensor::kernels::{conv1d_forward, conv3d_forward};
use gait_core::tensor::Tensor;
use gait_core::training::{adam_step, AdamState};
use rand::Rng as _;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv1d(c: &mut Criterion) {
    let input = rand_tensor(&[36, 50], 1);
    let kernels = rand_tensor(&[128, 36, 3], 2);
    let bias = rand_tensor(&[128], 3);
    c.bench_function("conv1d 36x50 -> 128ch k3", |b| {
        b.iter(|| conv1d_forward(black_box(&input), &kernels, &bias, 1, 1).unwrap())
    });
}

fn bench_conv3d(c: &mut Criterion) {
    let input = rand_tensor(&[1, 16, 44, 64], 4);
    let kernels = rand_tensor(&[8, 1, 3, 3, 3], 5);
    let bias = rand_tensor(&[8], 6);
    c.bench_function("conv3d 16x44x64 -> 8ch k3", |b| {
        b.iter(|| conv3d_forward(black_box(&input), &kernels, &bias, [1; 3], [1; 3]).unwrap())
    });
}

fn bench_lstm(c: &mut Criterion) {
    let mut rng = rng_from(7);
    let cell = LstmCell::new(128, 128, &mut rng);
    let seq = rand_tensor(&[50, 128], 8);
    c.bench_function("lstm_sequence T=50 H=128", |b| {
        b.iter(|| lstm_sequence(black_box(&seq), &cell, Direction::Forward).unwrap())
    });
}

fn bench_adam(c: &mut Criterion) {
    let mut p = Param::new("w", rand_tensor(&[512, 256], 9));
    p.grad = rand_tensor(&[512, 256], 10);
    let mut state = AdamState::new();
    c.bench_function("adam_step 512x256", |b| {
        b.iter(|| adam_step(black_box(&mut [&mut p]), &mut state, 1e-3).unwrap())
    });
}

criterion_group!(benches, bench_conv1d, bench_conv3d, bench_lstm, bench_adam);
criterion_main!(benches);
