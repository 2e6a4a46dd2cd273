//! Evaluation metrics.
//!
//! Every model-level metric is split into a forward pass and a pure function
//! over hidden states, probabilities or attention maps, so the arithmetic can
//! be checked independently of the model. Definitions are collected in
//! `METRICS.md` at the repository root.

mod report;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ShiftCorpus, Vocab};
use crate::error::{Result, ScrError};
use crate::model::{self, DecodingConfig, ForwardOptions, HiddenTrace, ModelParams, ScrMode, TokenId};
use crate::scr::RealignConfig;
use crate::tensor::{cosine, log_sum_exp, softmax, Matrix};

pub use report::{MetricReport, ReportMetadata};

/// A model together with the realignment setting it is evaluated under.
#[derive(Clone, Copy, Debug)]
pub struct EvalModel<'a> {
    pub params: &'a ModelParams,
    pub mode: ScrMode,
    pub realign: &'a RealignConfig,
}

impl<'a> EvalModel<'a> {
    pub fn new(params: &'a ModelParams, mode: ScrMode, realign: &'a RealignConfig) -> Self {
        Self { params, mode, realign }
    }

    fn trace(&self, tokens: &[TokenId], keep_attention: bool) -> Result<HiddenTrace> {
        model::forward_with(tokens, self.params, self.mode, self.realign, ForwardOptions { keep_attention })
    }
}

/// Mean-pooled final-layer hidden state over a token span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEmbedding {
    pub vector: Vec<f64>,
    /// Half-open token range `[start, end)`.
    pub span: (usize, usize),
}

impl SegmentEmbedding {
    pub fn pool(hidden: &Matrix, start: usize, end: usize) -> Result<Self> {
        if end <= start || end > hidden.rows() {
            return Err(ScrError::Input(format!("cannot pool rows {start}..{end} of {}", hidden.rows())));
        }
        Ok(Self { vector: hidden.mean_rows(start, end), span: (start, end) })
    }
}

/// Consecutive segments of `segment_len` rows starting at `start`; a
/// trailing partial segment is dropped.
pub fn segment_embeddings(
    hidden: &Matrix,
    start: usize,
    end: usize,
    segment_len: usize,
) -> Result<Vec<SegmentEmbedding>> {
    if segment_len == 0 {
        return Err(ScrError::Input("segment length must be positive".into()));
    }
    let count = end.saturating_sub(start) / segment_len;
    (0..count).map(|s| SegmentEmbedding::pool(hidden, start + s * segment_len, start + (s + 1) * segment_len)).collect()
}

/// `100 · mean_i max(0, cos(e_i, e_{i+1}))` over adjacent segments.
pub fn consistency_score(segments: &[SegmentEmbedding]) -> Result<f64> {
    if segments.len() < 2 {
        return Err(ScrError::Input(format!("need at least 2 segments, got {}", segments.len())));
    }
    let pairs = segments.len() - 1;
    let sum: f64 = segments.windows(2).map(|w| cosine(&w[0].vector, &w[1].vector).max(0.0)).sum();
    Ok(100.0 * sum / pairs as f64)
}

pub fn contextual_consistency(model: &EvalModel<'_>, sequence: &[TokenId], segment_len: usize) -> Result<f64> {
    if segment_len == 0 || sequence.len() < 2 * segment_len {
        return Err(ScrError::Input(format!(
            "sequence of {} tokens has fewer than two segments of {segment_len}",
            sequence.len()
        )));
    }
    let trace = model.trace(sequence, false)?;
    consistency_score(&segment_embeddings(trace.final_hidden(), 0, sequence.len(), segment_len)?)
}

/// Consistency restricted to segment pairs inside one topic span, averaged
/// over spans.
pub fn retention_score(hidden: &Matrix, spans: &[(usize, usize)], segment_len: usize) -> Result<f64> {
    if spans.is_empty() {
        return Err(ScrError::Input("no topic spans".into()));
    }
    let mut total = 0.0;
    for &(start, end) in spans {
        let segs = segment_embeddings(hidden, start, end, segment_len)?;
        if segs.len() < 2 {
            return Err(ScrError::Input(format!(
                "topic span {start}..{end} holds fewer than two segments of {segment_len}"
            )));
        }
        total += consistency_score(&segs)?;
    }
    Ok(total / spans.len() as f64)
}

pub fn coherence_retention(
    model: &EvalModel<'_>,
    corpus: &ShiftCorpus,
    vocab: &Vocab,
    segment_len: usize,
) -> Result<f64> {
    corpus.validate()?;
    let spans = corpus.spans();
    for &(s, e) in &spans {
        if e - s < 2 * segment_len.max(1) {
            return Err(ScrError::Input(format!("topic span {s}..{e} is shorter than two segments")));
        }
    }
    let tokens = vocab.encode(&corpus.text);
    let trace = model.trace(&tokens, false)?;
    retention_score(trace.final_hidden(), &spans, segment_len)
}

fn fraction_rows(n: usize, frac: f64) -> Result<usize> {
    if !(frac > 0.0 && frac <= 0.5) {
        return Err(ScrError::Input(format!("pooling fraction must lie in (0, 0.5], got {frac}")));
    }
    let rows = (frac * n as f64).floor() as usize;
    if rows == 0 {
        return Err(ScrError::Input(format!("{n} tokens are too few to pool a {frac} fraction")));
    }
    Ok(rows)
}

/// `1 - cos` between the mean of the first `early_frac` rows and the mean of
/// the last `late_frac` rows. Lies in `[0, 2]`.
pub fn divergence_score(hidden: &Matrix, early_frac: f64, late_frac: f64) -> Result<f64> {
    let n = hidden.rows();
    let early = fraction_rows(n, early_frac)?;
    let late = fraction_rows(n, late_frac)?;
    let a = hidden.mean_rows(0, early);
    let b = hidden.mean_rows(n - late, n);
    Ok(1.0 - cosine(&a, &b))
}

pub fn coherence_divergence(
    model: &EvalModel<'_>,
    sequence: &[TokenId],
    early_frac: f64,
    late_frac: f64,
) -> Result<f64> {
    fraction_rows(sequence.len(), early_frac)?;
    fraction_rows(sequence.len(), late_frac)?;
    let trace = model.trace(sequence, false)?;
    divergence_score(trace.final_hidden(), early_frac, late_frac)
}

/// Drift of each embedding from the first, `100 · (1 - cos)`. The first
/// entry is 0 by definition.
pub fn drift_from_embeddings(embeddings: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = embeddings.first() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(embeddings.len());
    out.push(0.0);
    out.extend(embeddings[1..].iter().map(|e| 100.0 * (1.0 - cosine(e, first))));
    out
}

/// Extends `prompt` by `segment_len` sampled tokens `n_iterations` times and
/// reports how far each new segment's embedding drifts from the first one.
pub fn semantic_drift(
    model: &EvalModel<'_>,
    prompt: &[TokenId],
    n_iterations: usize,
    segment_len: usize,
    decoding: &DecodingConfig,
) -> Result<Vec<f64>> {
    if n_iterations == 0 || segment_len == 0 {
        return Err(ScrError::Input("semantic drift needs at least one iteration and a positive segment".into()));
    }
    let mut text = prompt.to_vec();
    let mut embeddings = Vec::with_capacity(n_iterations);
    for it in 0..n_iterations {
        let dc = DecodingConfig { seed: decoding.seed.wrapping_add(it as u64), ..decoding.clone() };
        text = model::generate(&text, segment_len, model.params, model.mode, model.realign, &dc)?;
        let trace = model.trace(&text, false)?;
        let n = text.len();
        embeddings.push(SegmentEmbedding::pool(trace.final_hidden(), n - segment_len, n)?.vector);
    }
    Ok(drift_from_embeddings(&embeddings))
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Averages per-position values into `n_bins` equal-width bins of normalized
/// position; position `t` of `n` falls in bin `floor(t · n_bins / n)`.
/// Empty bins report 0.
pub fn bin_profile(values: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(ScrError::Input("need at least one bin".into()));
    }
    let n = values.len();
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (t, &v) in values.iter().enumerate() {
        let b = t * n_bins / n;
        sums[b] += v;
        counts[b] += 1;
    }
    Ok(sums.iter().zip(&counts).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect())
}

/// Entropy of the next-token distribution at every position of a logits matrix.
pub fn position_entropies(logits: &Matrix) -> Vec<f64> {
    (0..logits.rows()).map(|i| shannon_entropy(&softmax(logits.row(i)))).collect()
}

pub fn token_entropy_profile(model: &EvalModel<'_>, sequence: &[TokenId], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(ScrError::Input("need at least one bin".into()));
    }
    let trace = model.trace(sequence, false)?;
    bin_profile(&position_entropies(&trace.logits), n_bins)
}

/// `½ Σ |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Mean total-variation distance (percent) between corresponding attention
/// rows of two layers, averaged over heads and query positions.
pub fn layer_pair_deviation(upper: &[Matrix], lower: &[Matrix]) -> Result<f64> {
    if upper.len() != lower.len() || upper.is_empty() {
        return Err(ScrError::Shape(format!("head counts {} and {} differ", upper.len(), lower.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in upper.iter().zip(lower) {
        a.same_shape(b, "attention maps")?;
        for i in 0..a.rows() {
            total += total_variation(a.row(i), b.row(i));
            count += 1;
        }
    }
    Ok(100.0 * total / count.max(1) as f64)
}

/// Deviation of layer `l` from layer `l - 1` for every `l ≥ 1` (zero-based).
pub fn attention_head_deviation(trace: &HiddenTrace) -> Result<Vec<f64>> {
    if trace.attention.len() < 2 {
        return Err(ScrError::Input("attention deviation needs at least two layers".into()));
    }
    if trace.attention.iter().any(Vec::is_empty) {
        return Err(ScrError::Input("trace was recorded without attention maps".into()));
    }
    trace.attention.windows(2).map(|w| layer_pair_deviation(&w[1], &w[0])).collect()
}

/// Population standard deviation of positional-embedding row norms inside
/// each half-open position group.
pub fn positional_stability(positional: &Matrix, groups: &[(usize, usize)]) -> Result<Vec<f64>> {
    groups
        .iter()
        .map(|&(start, end)| {
            if end <= start {
                return Err(ScrError::Input(format!("empty position group {start}..{end}")));
            }
            if end > positional.rows() {
                return Err(ScrError::Input(format!(
                    "position group {start}..{end} exceeds {} positions",
                    positional.rows()
                )));
            }
            let norms: Vec<f64> =
                (start..end).map(|i| positional.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            // Shifted by the first norm so equal norms give exactly zero.
            let shifted: Vec<f64> = norms.iter().map(|v| v - norms[0]).collect();
            let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
            let var = shifted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / shifted.len() as f64;
            Ok(var.sqrt())
        })
        .collect()
}

/// Per-token cross-entropy sum and token count for one sequence under
/// teacher forcing. Long sequences are evaluated in windows of the model's
/// context length.
fn sequence_nll(model: &EvalModel<'_>, seq: &[TokenId]) -> Result<(f64, usize)> {
    let window = model.params.config.max_seq_len;
    let mut nll = 0.0;
    let mut count = 0;
    let mut start = 0;
    while start + 1 < seq.len() {
        let end = (start + window + 1).min(seq.len());
        let input = &seq[start..end - 1];
        let target = &seq[start + 1..end];
        let trace = model.trace(input, false)?;
        for (i, &t) in target.iter().enumerate() {
            let row = trace.logits.row(i);
            nll += log_sum_exp(row) - row[t];
        }
        count += target.len();
        start = end - 1;
    }
    Ok((nll, count))
}

/// `exp` of the mean per-token cross-entropy over every sequence.
pub fn perplexity(model: &EvalModel<'_>, corpus: &[Vec<TokenId>]) -> Result<f64> {
    let parts = crate::par::map_slice(corpus, |s| sequence_nll(model, s));
    let mut nll = 0.0;
    let mut count = 0;
    for p in parts {
        let (a, b) = p?;
        nll += a;
        count += b;
    }
    if count == 0 {
        return Err(ScrError::Input("corpus has no predictable tokens".into()));
    }
    Ok((nll / count as f64).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub seq_len: usize,
    pub off_median_ms: f64,
    pub on_median_ms: f64,
    pub off_range_ms: (f64, f64),
    pub on_range_ms: (f64, f64),
    pub off_memory_bytes: usize,
    pub on_memory_bytes: usize,
}

impl LatencyPoint {
    /// `on / off - 1`.
    pub fn overhead(&self) -> f64 {
        self.on_median_ms / self.off_median_ms - 1.0
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn memory_estimate(params: &ModelParams, trace: &HiddenTrace) -> usize {
    let cfg = &params.config;
    let n = trace.seq_len();
    // Largest per-layer working set: Q, K, V, context, two norm outputs, FFN
    // pre-activation and activation.
    let transient = (6 * n * cfg.d_model + 2 * n * cfg.d_ff) * std::mem::size_of::<f64>();
    params.parameter_count() * std::mem::size_of::<f64>() + trace.tensor_bytes() + transient
}

/// Median forward latency with realignment off and on at each length.
/// Runs alternate between the two settings so both see the same machine load.
pub fn profile_inference(
    params: &ModelParams,
    realign: &RealignConfig,
    lengths: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<LatencyPoint>> {
    if repeats < 3 {
        return Err(ScrError::Input("profiling needs at least 3 repeats".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = ForwardOptions { keep_attention: false };
    let mut out = Vec::with_capacity(lengths.len());
    for &len in lengths {
        if len == 0 || len > params.config.max_seq_len {
            return Err(ScrError::Length { len, max: params.config.max_seq_len });
        }
        let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..params.config.vocab_size)).collect();
        let mut off = Vec::with_capacity(repeats);
        let mut on = Vec::with_capacity(repeats);
        let mut mem = (0, 0);
        for r in 0..repeats {
            for mode in if r % 2 == 0 { [ScrMode::Off, ScrMode::On] } else { [ScrMode::On, ScrMode::Off] } {
                let t0 = Instant::now();
                let trace = model::forward_with(&tokens, params, mode, realign, opts)?;
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                let bytes = memory_estimate(params, &trace);
                match mode {
                    ScrMode::Off => {
                        off.push(ms);
                        mem.0 = bytes;
                    }
                    ScrMode::On => {
                        on.push(ms);
                        mem.1 = bytes;
                    }
                }
            }
        }
        let range =
            |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(0.0, f64::max));
        let (off_range_ms, on_range_ms) = (range(&off), range(&on));
        out.push(LatencyPoint {
            seq_len: len,
            off_median_ms: median(&mut off),
            on_median_ms: median(&mut on),
            off_range_ms,
            on_range_ms,
            off_memory_bytes: mem.0,
            on_memory_bytes: mem.1,
        });
    }
    Ok(out)
}
