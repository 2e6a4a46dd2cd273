//! Combined objective, hand-written reverse-mode gradients and the two-phase
//! SGD loop.
//!
//! The objective for one sequence is
//!
//! ```text
//! total = CE + lambda_coh · Σ_l L_coh(l)
//! ```
//!
//! where `CE` is the mean next-token cross-entropy and the sum runs over the
//! layers that realigned. A batch objective is the mean over its sequences.

pub mod gradcheck;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, Example};
use crate::error::{Result, ScrError};
use crate::model::{self, HiddenTrace, ModelParams, PositionalMode, ScrMode, StepOptions, TokenId};
use crate::par;
use crate::scr::{self, RealignConfig};
use crate::tensor::{layer_norm_backward, log_sum_exp, Matrix};

pub use gradcheck::{check_objective, finite_diff_check, GradCheckOptions, GradCheckReport, ModelObjective, Objective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean cross-entropy, nats per token.
    pub cross_entropy: f64,
    /// One entry per layer when any layer realigned, otherwise empty.
    pub coherence_per_layer: Vec<f64>,
    pub lambda_coh: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(cross_entropy: f64, coherence_per_layer: Vec<f64>, lambda_coh: f64) -> Self {
        let total = cross_entropy + lambda_coh * coherence_per_layer.iter().sum::<f64>();
        Self { cross_entropy, coherence_per_layer, lambda_coh, total }
    }

    pub fn coherence_total(&self) -> f64 {
        self.coherence_per_layer.iter().sum()
    }
}

/// Mean of `-log softmax(logits_i)[targets_i]` over rows.
pub fn cross_entropy(logits: &Matrix, targets: &[TokenId]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(ScrError::Shape(format!("{} logit rows for {} targets", logits.rows(), targets.len())));
    }
    if targets.is_empty() {
        return Err(ScrError::Input("no targets".into()));
    }
    logits.ensure_finite("logits")?;
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= logits.cols() {
            return Err(ScrError::Input(format!("target {t} out of range for vocab {}", logits.cols())));
        }
        let row = logits.row(i);
        total += log_sum_exp(row) - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// Cross-entropy plus the coherence terms of every layer that realigned in
/// `trace`.
pub fn combined_loss(trace: &HiddenTrace, targets: &[TokenId], realign: &RealignConfig) -> Result<LossBreakdown> {
    realign.validate()?;
    let ce = cross_entropy(&trace.logits, targets)?;
    let coherence = if trace.gates.iter().any(Option::is_some) {
        let mut per_layer = Vec::with_capacity(trace.hidden.len());
        for (l, gate) in trace.gates.iter().enumerate() {
            if gate.is_some() {
                let prev = if l == 0 { &trace.embedding } else { &trace.hidden[l - 1] };
                per_layer.push(scr::coherence_loss(&trace.hidden[l], prev)?);
            } else {
                per_layer.push(0.0);
            }
        }
        per_layer
    } else {
        Vec::new()
    };
    Ok(LossBreakdown::from_parts(ce, coherence, realign.lambda_coh))
}

/// Realignment applies when the model carries gates; `realign` decides where.
pub fn effective_mode(params: &ModelParams) -> ScrMode {
    if params.has_gates() {
        ScrMode::On
    } else {
        ScrMode::Off
    }
}

fn batch_breakdown(parts: &[LossBreakdown], lambda_coh: f64) -> LossBreakdown {
    let n = parts.len() as f64;
    let ce = parts.iter().map(|p| p.cross_entropy).sum::<f64>() / n;
    let width = parts.iter().map(|p| p.coherence_per_layer.len()).max().unwrap_or(0);
    let coherence = (0..width)
        .map(|l| parts.iter().map(|p| p.coherence_per_layer.get(l).copied().unwrap_or(0.0)).sum::<f64>() / n)
        .collect();
    LossBreakdown::from_parts(ce, coherence, lambda_coh)
}

/// Batch-mean objective without gradients.
pub fn batch_loss(params: &ModelParams, batch: &[Example], realign: &RealignConfig) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(ScrError::Input("empty batch".into()));
    }
    let mode = effective_mode(params);
    let opts = StepOptions { keep_attention: false, keep_cache: false };
    let parts = par::map_slice(batch, |(x, y)| {
        let (trace, _) = model::forward_internal(x, params, mode, realign, opts)?;
        combined_loss(&trace, y, realign)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(batch_breakdown(&parts, realign.lambda_coh))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BackwardOptions {
    /// Restrict each gate projection's gradient to its own layer's coherence
    /// term, leaving the cross-entropy path out of `W_p`.
    pub gate_grad_coherence_only: bool,
}

/// Gradients of the batch-mean combined objective for every tensor.
pub fn backward(
    params: &ModelParams,
    batch: &[Example],
    realign: &RealignConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    backward_with(params, batch, realign, BackwardOptions::default())
}

pub fn backward_with(
    params: &ModelParams,
    batch: &[Example],
    realign: &RealignConfig,
    opts: BackwardOptions,
) -> Result<(LossBreakdown, ModelParams)> {
    if batch.is_empty() {
        return Err(ScrError::Input("empty batch".into()));
    }
    realign.validate()?;
    let results = par::map_slice(batch, |(x, y)| sequence_backward(params, x, y, realign, opts));
    let mut parts = Vec::with_capacity(results.len());
    let mut grads = params.zeros_like();
    for r in results {
        let (loss, g) = r?;
        parts.push(loss);
        for ((_, acc), (_, gt)) in grads.named_tensors_mut().into_iter().zip(g.named_tensors()) {
            acc.add_assign(gt);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for (name, t) in grads.named_tensors_mut() {
        t.scale(inv);
        t.ensure_finite(&format!("gradient of {name}"))?;
    }
    Ok((batch_breakdown(&parts, realign.lambda_coh), grads))
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    a.zip_map(b, |x, y| x * y)
}

/// Reverse-mode pass over one sequence.
fn sequence_backward(
    params: &ModelParams,
    input: &[TokenId],
    targets: &[TokenId],
    realign: &RealignConfig,
    opts: BackwardOptions,
) -> Result<(LossBreakdown, ModelParams)> {
    if input.len() != targets.len() {
        return Err(ScrError::Shape(format!("{} inputs for {} targets", input.len(), targets.len())));
    }
    let cfg = &params.config;
    let mode = effective_mode(params);
    let step_opts = StepOptions { keep_attention: false, keep_cache: true };
    let (trace, cache) = model::forward_internal(input, params, mode, realign, step_opts)?;
    let cache = cache.expect("cache requested");
    let loss = combined_loss(&trace, targets, realign)?;
    let lambda = realign.lambda_coh;

    let n = input.len();
    let mut grads = params.zeros_like();

    // d CE / d logits = (softmax - onehot) / n
    let mut dlogits = Matrix::zeros(n, cfg.vocab_size);
    for (i, &t) in targets.iter().enumerate() {
        let row = trace.logits.row(i);
        let lse = log_sum_exp(row);
        for (d, &z) in dlogits.row_mut(i).iter_mut().zip(row) {
            *d = (z - lse).exp() / n as f64;
        }
        dlogits[(i, t)] -= 1.0 / n as f64;
    }
    grads.output_projection = cache.final_normed.t_matmul(&dlogits);
    let dnormed = dlogits.matmul_t(&params.output_projection);
    let mut dx = layer_norm_backward(&dnormed, &cache.final_normed, &cache.final_inv_std);

    let d = cfg.d_model;
    let dk = cfg.head_dim();
    let scale = (dk as f64).sqrt();

    for l in (0..cfg.n_layers).rev() {
        let layer = &params.layers[l];
        let lc = &cache.layers[l];
        let x_in = if l == 0 { &trace.embedding } else { &trace.hidden[l - 1] };
        let h = &trace.pre_blend[l];

        let (mut dh, mut dx_in) = match &trace.gates[l] {
            Some(alpha) => {
                let gate = &params.scr_gates[l];
                let diff = trace.hidden[l].sub(x_in);
                let mut local = diff.clone();
                local.scale(2.0 * lambda);
                let g_total = dx.add(&local);
                let mut dx_in = g_total.zip_map(alpha, |g, a| g * (1.0 - a));
                dx_in.axpy(-1.0, &local);
                let mut dh = hadamard(&g_total, alpha);
                let h_minus_prev = h.sub(x_in);
                let sig_slope = alpha.map(scr::gate_slope);
                let dpre = hadamard(&hadamard(&g_total, &h_minus_prev), &sig_slope);
                grads.scr_gates[l].w_p = if opts.gate_grad_coherence_only {
                    let dpre_local = hadamard(&hadamard(&local, &h_minus_prev), &sig_slope);
                    dpre_local.t_matmul(h)
                } else {
                    dpre.t_matmul(h)
                };
                dh.add_assign(&dpre.matmul(&gate.w_p));
                (dh, dx_in)
            }
            None => (dx.clone(), Matrix::zeros(n, d)),
        };

        // h = x_mid + ReLU(LN(x_mid) W_f + b_f) W_f2 + b_f2
        let g = &mut grads.layers[l];
        g.w_f2 = lc.ff_act.t_matmul(&dh);
        g.b_f2 = Matrix::from_vec(1, d, dh.column_sums())?;
        let dact = dh.matmul_t(&layer.w_f2);
        let dpre_ff = dact.zip_map(&lc.ff_pre, |gv, z| if z > 0.0 { gv } else { 0.0 });
        g.w_f = lc.normed_ff.t_matmul(&dpre_ff);
        g.b_f = Matrix::from_vec(1, cfg.d_ff, dpre_ff.column_sums())?;
        let dnormed_ff = dpre_ff.matmul_t(&layer.w_f);
        let mut dx_mid = std::mem::replace(&mut dh, Matrix::zeros(0, 0));
        dx_mid.add_assign(&layer_norm_backward(&dnormed_ff, &lc.normed_ff, &lc.inv_std_ff));

        // x_mid = x_in + context W_o
        g.w_o = lc.context.t_matmul(&dx_mid);
        let dcontext = dx_mid.matmul_t(&layer.w_o);
        dx_in.add_assign(&dx_mid);

        let mut dq = Matrix::zeros(n, d);
        let mut dkm = Matrix::zeros(n, d);
        let mut dv = Matrix::zeros(n, d);
        for (hd, probs) in lc.probs.iter().enumerate() {
            let off = hd * dk;
            for i in 0..n {
                let dctx = &dcontext.row(i)[off..off + dk];
                let mut dp = vec![0.0; i + 1];
                for (j, dpj) in dp.iter_mut().enumerate() {
                    let vj = &lc.v.row(j)[off..off + dk];
                    *dpj = crate::tensor::dot(dctx, vj);
                    let pij = probs[(i, j)];
                    for (dvv, c) in dv.row_mut(j)[off..off + dk].iter_mut().zip(dctx) {
                        *dvv += pij * c;
                    }
                }
                let weighted: f64 = dp.iter().enumerate().map(|(j, v)| probs[(i, j)] * v).sum();
                for (j, &dpj) in dp.iter().enumerate() {
                    let ds = probs[(i, j)] * (dpj - weighted) / scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dk {
                        dq[(i, off + c)] += ds * lc.k[(j, off + c)];
                        dkm[(j, off + c)] += ds * lc.q[(i, off + c)];
                    }
                }
            }
        }
        g.w_q = lc.normed_attn.t_matmul(&dq);
        g.w_k = lc.normed_attn.t_matmul(&dkm);
        g.w_v = lc.normed_attn.t_matmul(&dv);
        let mut dnormed_attn = dq.matmul_t(&layer.w_q);
        dnormed_attn.add_assign(&dkm.matmul_t(&layer.w_k));
        dnormed_attn.add_assign(&dv.matmul_t(&layer.w_v));
        dx_in.add_assign(&layer_norm_backward(&dnormed_attn, &lc.normed_attn, &lc.inv_std_attn));
        dx = dx_in;
    }

    let learned_positions = cfg.positional_mode == PositionalMode::Learned;
    for (i, &t) in input.iter().enumerate() {
        let row = dx.row(i);
        for (a, v) in grads.token_embedding.row_mut(t).iter_mut().zip(row) {
            *a += v;
        }
        if learned_positions {
            for (a, v) in grads.positional_embedding.row_mut(i).iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    Ok((loss, grads))
}

/// `θ ← θ − η·g` for every trainable tensor.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, learning_rate: f64) -> Result<()> {
    if grads.config != params.config || grads.scr_gates.len() != params.scr_gates.len() {
        return Err(ScrError::Shape("gradient layout does not match parameters".into()));
    }
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(ScrError::Config(format!("learning rate must be finite and >= 0, got {learning_rate}")));
    }
    let trainable: Vec<bool> = params.named_tensors().iter().map(|(n, _)| params.is_trainable(n)).collect();
    for (((name, p), (_, g)), train) in params.named_tensors_mut().into_iter().zip(grads.named_tensors()).zip(trainable)
    {
        p.same_shape(g, &name)?;
        if !train {
            continue;
        }
        for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            let step = learning_rate * gv;
            if step != 0.0 {
                *pv -= step;
            }
        }
    }
    Ok(())
}

/// Global L2 norm over trainable gradient tensors.
pub fn gradient_norm(grads: &ModelParams) -> f64 {
    grads
        .named_tensors()
        .iter()
        .filter(|(n, _)| grads.is_trainable(n))
        .map(|(_, t)| t.sum_squares())
        .sum::<f64>()
        .sqrt()
}

fn gate_gradient_norm(grads: &ModelParams) -> f64 {
    grads.scr_gates.iter().map(|g| g.w_p.sum_squares()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub finetune_steps: usize,
    pub batch_size: usize,
    /// Window length of each training sequence.
    pub seq_len: usize,
    /// Coherence weight used in the fine-tuning phase.
    pub lambda_coh: f64,
    pub seed: u64,
    /// Global-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub gate_grad_coherence_only: bool,
}

fn default_clip() -> Option<f64> {
    Some(1.0)
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            warmup_steps: 100,
            finetune_steps: 100,
            batch_size: 8,
            seq_len: 32,
            lambda_coh: 0.1,
            seed: 0,
            clip_norm: default_clip(),
            gate_grad_coherence_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ScrError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(ScrError::Config("batch_size and seq_len must be positive".into()));
        }
        if !(self.lambda_coh >= 0.0 && self.lambda_coh.is_finite()) {
            return Err(ScrError::Config("lambda_coh must be finite and >= 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(ScrError::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.warmup_steps + self.finetune_steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: LossBreakdown,
    /// L2 norm of all gate-projection gradients before clipping.
    pub gate_grad_norm: f64,
}

/// Seed of the batch drawn at `step`.
fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Two-phase training: warm-up steps run with realignment and the coherence
/// term switched off, then fine-tuning steps apply `realign` with the
/// configured coherence weight.
pub fn train(
    params: &ModelParams,
    corpus: &[TokenId],
    config: &TrainConfig,
    realign: &RealignConfig,
) -> Result<(ModelParams, Vec<StepRecord>)> {
    config.validate()?;
    realign.validate()?;
    if corpus.is_empty() {
        return Err(ScrError::Input("empty training corpus".into()));
    }
    let mut params = params.clone();
    let mut history = Vec::with_capacity(config.total_steps());
    if config.total_steps() == 0 {
        return Ok((params, history));
    }
    let warm = RealignConfig::disabled();
    let fine = RealignConfig { lambda_coh: config.lambda_coh, ..realign.clone() };
    let bopts = BackwardOptions { gate_grad_coherence_only: config.gate_grad_coherence_only };
    for step in 0..config.total_steps() {
        let (phase, rc) = if step < config.warmup_steps { (Phase::Warmup, &warm) } else { (Phase::Finetune, &fine) };
        let batch = data::batch(corpus, config.seq_len, config.batch_size, step_seed(config.seed, step))?;
        let (loss, mut grads) = backward_with(&params, &batch, rc, bopts)?;
        let gate_grad_norm = gate_gradient_norm(&grads);
        if let Some(clip) = config.clip_norm {
            let norm = gradient_norm(&grads);
            if norm > clip {
                let s = clip / norm;
                for (_, t) in grads.named_tensors_mut() {
                    t.scale(s);
                }
            }
        }
        sgd_step(&mut params, &grads, config.learning_rate)?;
        history.push(StepRecord { step, phase, loss, gate_grad_norm });
    }
    Ok((params, history))
}

/// Trailing moving average of cross-entropy over `window` steps.
pub fn smoothed_cross_entropy(history: &[StepRecord], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..history.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s: f64 = history[lo..=i].iter().map(|r| r.loss.cross_entropy).sum();
            s / (i + 1 - lo) as f64
        })
        .collect()
}

/// CSV with columns `step,cross_entropy,coherence_total,total`.
pub fn write_loss_history(history: &[StepRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,cross_entropy,coherence_total,total")?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.step, r.loss.cross_entropy, r.loss.coherence_total(), r.loss.total)?;
    }
    f.flush()?;
    Ok(())
}
