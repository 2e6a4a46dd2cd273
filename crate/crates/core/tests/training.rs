mod common;

use common::*;
use scr_core::data;
use scr_core::model::{forward, init_params, ModelParams, ScrMode};
use scr_core::scr::{coherence_loss, RealignConfig};
use scr_core::train::{
    self, backward, backward_with, batch_loss, combined_loss, cross_entropy, finite_diff_check, gradient_norm,
    sgd_step, BackwardOptions, Phase, TrainConfig,
};

fn small(seed: u64) -> ModelParams {
    init_params(&config(6, 8, 2, 2, 8), 0.2, seed).unwrap()
}

fn batch(seed: u64) -> Vec<data::Example> {
    let toks = random_tokens(&mut rng(seed), 64, 6);
    data::batch(&toks, 8, 3, seed).unwrap()
}

#[test]
fn cross_entropy_matches_per_position_oracle() {
    let mut r = rng(1);
    let logits = random_matrix(&mut r, 4, 8, 3.0);
    let targets = random_tokens(&mut r, 4, 8);
    let mut want = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
        want -= (logits.row(i)[t].exp() / z).ln();
    }
    want /= 4.0;
    assert!((cross_entropy(&logits, &targets).unwrap() - want).abs() < 1e-12);
}

#[test]
fn combined_loss_is_recomputable() {
    let p = small(2);
    let rc = RealignConfig::all_layers(2, 0, 0.3);
    let (x, y) = &batch(3)[0];
    let trace = forward(x, &p, ScrMode::On, &rc).unwrap();
    let got = combined_loss(&trace, y, &rc).unwrap();
    let mut coh = 0.0;
    for l in 0..2 {
        let prev = if l == 0 { &trace.embedding } else { &trace.hidden[l - 1] };
        coh += coherence_loss(&trace.hidden[l], prev).unwrap();
    }
    let ce = cross_entropy(&trace.logits, y).unwrap();
    assert!((got.total - (ce + 0.3 * coh)).abs() < 1e-12);
    assert_eq!(got.coherence_per_layer.len(), 2);

    let zero = RealignConfig { lambda_coh: 0.0, ..rc };
    let l0 = combined_loss(&trace, y, &zero).unwrap();
    assert_eq!(l0.total, l0.cross_entropy);
}

#[test]
fn small_model_passes_gradient_check() {
    let p = small(4);
    let b = batch(5);
    for rc in [RealignConfig::all_layers(2, 0, 0.1), RealignConfig::disabled()] {
        let report = finite_diff_check(&p, &b, &rc, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{}[{}]: {}", report.worst_tensor, report.worst_index, report.max_rel_error);
    }
}

#[test]
fn coherence_only_flag_restricts_gate_gradient() {
    let p = small(6);
    let b = batch(7);
    let rc = RealignConfig::all_layers(2, 0, 0.0);
    let (_, full) = backward(&p, &b, &rc).unwrap();
    let (_, only) = backward_with(&p, &b, &rc, BackwardOptions { gate_grad_coherence_only: true }).unwrap();
    assert!(full.scr_gates.iter().any(|g| g.w_p.sum_squares() > 0.0));
    assert!(only.scr_gates.iter().all(|g| g.w_p.sum_squares() == 0.0));
    assert_eq!(full.output_projection, only.output_projection);
}

#[test]
fn warmup_leaves_gate_gradients_at_zero() {
    let p = small(8);
    let text = data::synth_pattern_corpus("abcabd", 400, 0.0, 1).unwrap();
    let vocab = data::build_vocab(&format!("{}{text}", "ef")).unwrap();
    let toks = vocab.encode(&text);
    let tc = TrainConfig { warmup_steps: 5, finetune_steps: 5, batch_size: 2, seq_len: 8, ..TrainConfig::default() };
    let rc = RealignConfig::all_layers(2, 0, 0.1);
    let (q, hist) = train::train(&p, &toks, &tc, &rc).unwrap();
    assert_eq!(hist.len(), 10);
    for r in &hist[..5] {
        assert_eq!(r.phase, Phase::Warmup);
        assert_eq!(r.gate_grad_norm, 0.0);
        assert!(r.loss.coherence_per_layer.is_empty());
    }
    assert!(hist[5..].iter().all(|r| r.phase == Phase::Finetune && r.gate_grad_norm > 0.0));
    assert_ne!(p.scr_gates, q.scr_gates);

    let (again, _) = train::train(&p, &toks, &tc, &rc).unwrap();
    assert_eq!(q, again);
    let (other, _) = train::train(&p, &toks, &TrainConfig { seed: 99, ..tc.clone() }, &rc).unwrap();
    assert_ne!(q, other);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    train::write_loss_history(&hist, &path).unwrap();
    let csv = std::fs::read_to_string(&path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,cross_entropy,coherence_total,total"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn zero_steps_return_the_input() {
    let p = small(9);
    let toks = random_tokens(&mut rng(1), 50, 6);
    let tc = TrainConfig { warmup_steps: 0, finetune_steps: 0, seq_len: 8, ..TrainConfig::default() };
    let (q, hist) = train::train(&p, &toks, &tc, &RealignConfig::all_layers(2, 0, 0.1)).unwrap();
    assert!(hist.is_empty());
    assert_eq!(p, q);
}

#[test]
fn sgd_moves_against_the_gradient() {
    let p = small(10);
    let b = batch(11);
    let rc = RealignConfig::all_layers(2, 0, 0.1);
    let (before, g) = backward(&p, &b, &rc).unwrap();
    let mut q = p.clone();
    sgd_step(&mut q, &g, 1e-3 / gradient_norm(&g)).unwrap();
    assert!(batch_loss(&q, &b, &rc).unwrap().total < before.total);
    let mut same = p.clone();
    sgd_step(&mut same, &p.zeros_like(), 0.5).unwrap();
    assert_eq!(same, p);
    assert!(sgd_step(&mut same, &p.zeros_like(), f64::NAN).is_err());
    assert_eq!(same, p);
}

#[test]
fn one_thread_pool_gives_identical_gradients() {
    let p = init_params(&config(6, 16, 2, 4, 32), 0.1, 12).unwrap();
    let toks = random_tokens(&mut rng(13), 400, 6);
    let b = data::batch(&toks, 32, 6, 1).unwrap();
    let rc = RealignConfig::all_layers(2, 0, 0.1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (l1, g1) = pool.install(|| backward(&p, &b, &rc)).unwrap();
    let (l2, g2) = backward(&p, &b, &rc).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn clipping_bounds_the_applied_step() {
    let p = small(14);
    let text: String = "abcde".repeat(40);
    let vocab = data::build_vocab(&text).unwrap();
    let toks = vocab.encode(&text);
    let lr = 0.5;
    let tc = TrainConfig {
        learning_rate: lr,
        warmup_steps: 1,
        finetune_steps: 0,
        batch_size: 2,
        seq_len: 8,
        clip_norm: Some(1e-3),
        ..TrainConfig::default()
    };
    let (q, _) = train::train(&p, &toks, &tc, &RealignConfig::disabled()).unwrap();
    let mut moved = 0.0;
    for ((_, a), (_, b)) in p.named_tensors().into_iter().zip(q.named_tensors()) {
        moved += a.sub(b).sum_squares();
    }
    assert!(moved.sqrt() <= lr * 1e-3 * (1.0 + 1e-9));
    assert!(moved > 0.0);
}
