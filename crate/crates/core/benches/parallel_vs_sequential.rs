//! Runs each workload on the global rayon pool and on a one-thread pool.
//! Build with `--no-default-features` to measure the plain sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;
use scr_core::data;
use scr_core::model::{self, ForwardOptions, ModelConfig, PositionalMode, ScrMode};
use scr_core::scr::RealignConfig;
use scr_core::train::{self, gradcheck};

fn config(d_model: usize, max_seq_len: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        d_model,
        n_layers: 2,
        n_heads: 4,
        d_ff: 4 * d_model,
        max_seq_len,
        positional_mode: PositionalMode::Learned,
    }
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![
        ("pool", ThreadPoolBuilder::new().num_threads(threads).build().unwrap()),
        ("one_thread", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
    ]
}

fn tokens(n: usize) -> Vec<usize> {
    (0..n).map(|i| (i * 7 + 3) % 16).collect()
}

fn bench_backward(c: &mut Criterion) {
    let params = model::init_params(&config(64, 64), 0.02, 0).unwrap();
    let batch = data::batch(&tokens(4096), 32, 8, 0).unwrap();
    let realign = RealignConfig::all_layers(2, 0, 0.1);
    let mut group = c.benchmark_group("batch_backward");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| train::backward(&params, &batch, &realign).unwrap()))
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let params = model::init_params(&config(64, 1024), 0.02, 0).unwrap();
    let seq = tokens(1024);
    let realign = RealignConfig::all_layers(2, 0, 0.1);
    let opts = ForwardOptions { keep_attention: false };
    let mut group = c.benchmark_group("forward_1024");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| model::forward_with(&seq, &params, ScrMode::On, &realign, opts).unwrap()))
        });
    }
    group.finish();
}

fn bench_gradcheck(c: &mut Criterion) {
    let params = model::init_params(&config(16, 8), 0.1, 0).unwrap();
    let batch = data::batch(&tokens(64), 8, 2, 0).unwrap();
    let realign = RealignConfig::all_layers(2, 0, 0.1);
    let opts =
        gradcheck::GradCheckOptions { samples_per_tensor: 20, all_gate_coordinates: false, ..Default::default() };
    let objective = gradcheck::ModelObjective { batch: &batch, realign: &realign };
    let mut group = c.benchmark_group("finite_diff_check");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| gradcheck::check_objective(&objective, &params, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_backward, bench_forward, bench_gradcheck);
criterion_main!(benches);
