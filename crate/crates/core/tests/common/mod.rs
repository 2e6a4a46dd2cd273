#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scr_core::harness::{ExperimentConfig, ExperimentKind};
use scr_core::model::{ModelConfig, PositionalMode};
use scr_core::tensor::Matrix;

pub fn config(vocab: usize, d_model: usize, n_layers: usize, n_heads: usize, max_seq_len: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model,
        n_layers,
        n_heads,
        d_ff: 2 * d_model,
        max_seq_len,
        positional_mode: PositionalMode::Learned,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Triple-loop product.
pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let k = b.len();
    let m = if k == 0 { 0 } else { b[0].len() };
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

pub fn naive_mean_rows(rows: &[Vec<f64>], start: usize, end: usize) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in &rows[start..end] {
        for j in 0..d {
            out[j] += r[j];
        }
    }
    for v in &mut out {
        *v /= (end - start) as f64;
    }
    out
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn config_path(kind: ExperimentKind) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{}.toml", kind.as_str()))
}

/// The shipped config for `kind`, shrunk so a full run takes seconds.
pub fn tiny_experiment(kind: ExperimentKind, seeds: &[u64]) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&config_path(kind)).unwrap();
    c.seeds = seeds.to_vec();
    c.model.d_model = 16;
    c.model.n_heads = 2;
    c.model.d_ff = 32;
    c.model.max_seq_len = 256;
    c.train.warmup_steps = 3;
    c.train.finetune_steps = 3;
    c.train.batch_size = 2;
    c.train.seq_len = 16;
    c.data.corpus_length = 2000;
    c.data.segment_len = 16;
    c.data.span_len = 64;
    c.grid.lengths = Some(vec![64, 128, 256]);
    c.grid.shifts = vec![1, 2, 3, 4];
    c.grid.iterations = 4;
    c.grid.prompt_len = 8;
    c.grid.drift_segment_len = 8;
    c.grid.generation_len = 40;
    c.grid.attention_len = 32;
    c.grid.latency_repeats = 3;
    c
}
