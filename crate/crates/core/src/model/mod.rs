//! Minimal pre-norm decoder-only transformer.
//!
//! Each block computes
//!
//! ```text
//! x_mid = x + Attn(LN(x))
//! H_l   = x_mid + FFN(LN(x_mid))
//! ```
//!
//! and, when realignment is active for the layer, replaces `H_l` with the
//! gated blend of `H_l` and the block input (see [`crate::scr`]). Layer norms
//! carry no affine parameters. Logits are `LN(x_L) · W_out`.

pub mod checkpoint;
pub mod sampling;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScrError};
use crate::scr::{self, GateParams, RealignConfig};
use crate::tensor::{dot, layer_norm, softmax_in_place, Matrix};

pub use sampling::{generate, sample_next, DecodingConfig, DecodingStrategy};

pub type TokenId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalMode {
    Learned,
    Sinusoidal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub positional_mode: PositionalMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ScrError::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 2 {
            return Err(ScrError::Config("vocab_size must be at least 2".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ScrError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    /// `d_model × d_ff`
    pub w_f: Matrix,
    /// `1 × d_ff`
    pub b_f: Matrix,
    /// `d_ff × d_model`
    pub w_f2: Matrix,
    /// `1 × d_model`
    pub b_f2: Matrix,
}

impl LayerParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            w_o: Matrix::zeros(d, d),
            w_f: Matrix::zeros(d, cfg.d_ff),
            b_f: Matrix::zeros(1, cfg.d_ff),
            w_f2: Matrix::zeros(cfg.d_ff, d),
            b_f2: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("w_f", &self.w_f),
            ("b_f", &self.b_f),
            ("w_f2", &self.w_f2),
            ("b_f2", &self.b_f2),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 8] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("w_f", &mut self.w_f),
            ("b_f", &mut self.b_f),
            ("w_f2", &mut self.w_f2),
            ("b_f2", &mut self.b_f2),
        ]
    }
}

/// All weights of a model. The same type doubles as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub positional_embedding: Matrix,
    pub layers: Vec<LayerParams>,
    pub output_projection: Matrix,
    /// One gate per layer, or empty for a model without realignment.
    pub scr_gates: Vec<GateParams>,
}

impl ModelParams {
    /// All-zero parameters (gates included) with the shapes of `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            config: config.clone(),
            token_embedding: Matrix::zeros(config.vocab_size, config.d_model),
            positional_embedding: Matrix::zeros(config.max_seq_len, config.d_model),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(config)).collect(),
            output_projection: Matrix::zeros(config.d_model, config.vocab_size),
            scr_gates: (0..config.n_layers).map(|_| GateParams::zeros(config.d_model)).collect(),
        }
    }

    /// Zeros shaped like `self`, keeping gate presence and epsilons.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(&self.config);
        if self.scr_gates.is_empty() {
            z.scr_gates.clear();
        } else {
            for (g, src) in z.scr_gates.iter_mut().zip(&self.scr_gates) {
                g.epsilon = src.epsilon;
            }
        }
        z
    }

    pub fn has_gates(&self) -> bool {
        !self.scr_gates.is_empty()
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("positional_embedding".to_string(), &self.positional_embedding),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("output_projection".to_string(), &self.output_projection));
        for (l, g) in self.scr_gates.iter().enumerate() {
            out.push((format!("scr_gates.{l}.w_p"), &g.w_p));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("positional_embedding".to_string(), &mut self.positional_embedding),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, t) in layer.tensors_mut() {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("output_projection".to_string(), &mut self.output_projection));
        for (l, g) in self.scr_gates.iter_mut().enumerate() {
            out.push((format!("scr_gates.{l}.w_p"), &mut g.w_p));
        }
        out
    }

    /// Whether the named tensor is updated by training.
    pub fn is_trainable(&self, name: &str) -> bool {
        !(name == "positional_embedding" && self.config.positional_mode == PositionalMode::Sinusoidal)
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        self.token_embedding.ensure_shape(c.vocab_size, c.d_model, "token_embedding")?;
        self.positional_embedding.ensure_shape(c.max_seq_len, c.d_model, "positional_embedding")?;
        self.output_projection.ensure_shape(c.d_model, c.vocab_size, "output_projection")?;
        if self.layers.len() != c.n_layers {
            return Err(ScrError::Shape(format!("{} layers for n_layers {}", self.layers.len(), c.n_layers)));
        }
        let reference = LayerParams::zeros(c);
        for (l, layer) in self.layers.iter().enumerate() {
            for ((name, t), (_, r)) in layer.tensors().into_iter().zip(reference.tensors()) {
                t.ensure_shape(r.rows(), r.cols(), &format!("layers.{l}.{name}"))?;
            }
        }
        if !self.scr_gates.is_empty() && self.scr_gates.len() != c.n_layers {
            return Err(ScrError::Shape(format!("{} gates for n_layers {}", self.scr_gates.len(), c.n_layers)));
        }
        for g in &self.scr_gates {
            g.validate(c.d_model)?;
        }
        for (name, t) in self.named_tensors() {
            t.ensure_finite(&name)?;
        }
        Ok(())
    }
}

fn sinusoidal_table(max_len: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(max_len, d);
    for pos in 0..max_len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            m[(pos, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    m
}

/// Draws every weight i.i.d. from `N(0, sigma2)`; biases start at zero.
/// Gates are always allocated so that baseline and realigned variants share
/// one initialization.
pub fn init_params(config: &ModelConfig, sigma2: f64, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(ScrError::Config(format!("init variance must be finite and >= 0, got {sigma2}")));
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| ScrError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);
    let sinusoidal = config.positional_mode == PositionalMode::Sinusoidal;
    for (name, t) in params.named_tensors_mut() {
        let is_bias = name.ends_with(".b_f") || name.ends_with(".b_f2");
        if is_bias || (sinusoidal && name == "positional_embedding") {
            continue;
        }
        for v in t.as_mut_slice() {
            *v = normal.sample(&mut rng);
        }
    }
    if sinusoidal {
        params.positional_embedding = sinusoidal_table(config.max_seq_len, config.d_model);
    }
    Ok(params)
}

/// Row `i` is `token_embedding[tokens[i]] + positional_embedding[i]`.
pub fn embed(tokens: &[TokenId], params: &ModelParams) -> Result<Matrix> {
    let cfg = &params.config;
    if tokens.len() > cfg.max_seq_len {
        return Err(ScrError::Length { len: tokens.len(), max: cfg.max_seq_len });
    }
    let mut out = Matrix::zeros(tokens.len(), cfg.d_model);
    for (i, &t) in tokens.iter().enumerate() {
        if t >= cfg.vocab_size {
            return Err(ScrError::Input(format!("token id {t} out of range for vocab {}", cfg.vocab_size)));
        }
        let tok = params.token_embedding.row(t);
        let pos = params.positional_embedding.row(i);
        for ((o, a), b) in out.row_mut(i).iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }
    Ok(out)
}

/// Output of causal multi-head attention before the `W_o` projection.
pub(crate) struct AttentionOutput {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// One `seq_len × seq_len` map per head; empty when not kept.
    pub probs: Vec<Matrix>,
    /// Concatenated head contexts, `seq_len × d_model`.
    pub context: Matrix,
}

pub(crate) fn attention_core(x: &Matrix, layer: &LayerParams, n_heads: usize, keep_probs: bool) -> AttentionOutput {
    let n = x.rows();
    let d = x.cols();
    let dk = d / n_heads;
    let q = x.matmul(&layer.w_q);
    let k = x.matmul(&layer.w_k);
    let v = x.matmul(&layer.w_v);
    let scale = (dk as f64).sqrt();
    let mut context = Matrix::zeros(n, d);
    let mut probs = Vec::with_capacity(if keep_probs { n_heads } else { 0 });
    let parallel = n * n * dk >= crate::par::MIN_PARALLEL_WORK;
    for h in 0..n_heads {
        let off = h * dk;
        let row = |i: usize| {
            let qi = &q.row(i)[off..off + dk];
            let mut p: Vec<f64> = (0..=i).map(|j| dot(qi, &k.row(j)[off..off + dk]) / scale).collect();
            softmax_in_place(&mut p);
            let mut ctx = vec![0.0; dk];
            for (j, &pj) in p.iter().enumerate() {
                for (c, vv) in ctx.iter_mut().zip(&v.row(j)[off..off + dk]) {
                    *c += pj * vv;
                }
            }
            (p, ctx)
        };
        let rows: Vec<(Vec<f64>, Vec<f64>)> =
            if parallel { crate::par::map_range(n, row) } else { (0..n).map(row).collect() };
        let mut map = if keep_probs { Matrix::zeros(n, n) } else { Matrix::zeros(0, 0) };
        for (i, (p, ctx)) in rows.into_iter().enumerate() {
            context.row_mut(i)[off..off + dk].copy_from_slice(&ctx);
            if keep_probs {
                map.row_mut(i)[..=i].copy_from_slice(&p);
            }
        }
        if keep_probs {
            probs.push(map);
        }
    }
    AttentionOutput { q, k, v, probs, context }
}

/// Causal multi-head self-attention. Returns the per-head attention maps and
/// `concat_h(A_h · V_h) · W_o`.
pub fn self_attention(h: &Matrix, layer: &LayerParams, n_heads: usize) -> Result<(Vec<Matrix>, Matrix)> {
    h.ensure_finite("attention input")?;
    if n_heads == 0 || !h.cols().is_multiple_of(n_heads) {
        return Err(ScrError::Shape(format!("{} columns cannot split into {n_heads} heads", h.cols())));
    }
    layer.w_q.ensure_shape(h.cols(), h.cols(), "w_q")?;
    let out = attention_core(h, layer, n_heads, true);
    let projected = out.context.matmul(&layer.w_o);
    Ok((out.probs, projected))
}

/// Returns `(pre-activation, ReLU output, final output)`.
pub(crate) fn feedforward_parts(a: &Matrix, layer: &LayerParams) -> (Matrix, Matrix, Matrix) {
    let mut z = a.matmul(&layer.w_f);
    z.add_row_vector(layer.b_f.as_slice());
    let r = z.map(|v| v.max(0.0));
    let mut out = r.matmul(&layer.w_f2);
    out.add_row_vector(layer.b_f2.as_slice());
    (z, r, out)
}

/// `ReLU(A · W_f + b_f) · W_f2 + b_f2`.
pub fn feedforward(a: &Matrix, layer: &LayerParams) -> Result<Matrix> {
    a.ensure_finite("feedforward input")?;
    layer.w_f.ensure_shape(a.cols(), layer.w_f.cols(), "w_f")?;
    Ok(feedforward_parts(a, layer).2)
}

/// Intermediate values of one block kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    pub normed_attn: Matrix,
    pub inv_std_attn: Vec<f64>,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub probs: Vec<Matrix>,
    pub context: Matrix,
    pub normed_ff: Matrix,
    pub inv_std_ff: Vec<f64>,
    pub ff_pre: Matrix,
    pub ff_act: Matrix,
}

pub(crate) struct LayerStep {
    pub attention: Vec<Matrix>,
    pub pre_blend: Matrix,
    pub alpha: Option<Matrix>,
    pub output: Matrix,
    pub cache: Option<LayerCache>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StepOptions {
    pub keep_attention: bool,
    pub keep_cache: bool,
}

pub(crate) fn layer_forward(
    x: &Matrix,
    layer: &LayerParams,
    cfg: &ModelConfig,
    gate: Option<&GateParams>,
) -> Result<LayerStep> {
    layer_forward_with(x, layer, cfg, gate, StepOptions { keep_attention: true, keep_cache: false })
}

pub(crate) fn layer_forward_with(
    x: &Matrix,
    layer: &LayerParams,
    cfg: &ModelConfig,
    gate: Option<&GateParams>,
    opts: StepOptions,
) -> Result<LayerStep> {
    x.ensure_finite("layer input")?;
    let (normed_attn, inv_std_attn) = layer_norm(x);
    let att = attention_core(&normed_attn, layer, cfg.n_heads, opts.keep_attention || opts.keep_cache);
    let x_mid = x.add(&att.context.matmul(&layer.w_o));
    let (normed_ff, inv_std_ff) = layer_norm(&x_mid);
    let (ff_pre, ff_act, ff_out) = feedforward_parts(&normed_ff, layer);
    let pre_blend = x_mid.add(&ff_out);
    pre_blend.ensure_finite("layer output")?;
    let (alpha, output) = match gate {
        Some(g) => {
            let alpha = scr::gate_activation(&pre_blend, g)?;
            let blended = scr::contextual_reweight(&alpha, &pre_blend, x)?;
            (Some(alpha), blended)
        }
        None => (None, pre_blend.clone()),
    };
    let attention = if opts.keep_attention { att.probs.clone() } else { Vec::new() };
    let cache = opts.keep_cache.then_some(LayerCache {
        normed_attn,
        inv_std_attn,
        q: att.q,
        k: att.k,
        v: att.v,
        probs: att.probs,
        context: att.context,
        normed_ff,
        inv_std_ff,
        ff_pre,
        ff_act,
    });
    Ok(LayerStep { attention, pre_blend, alpha, output, cache })
}

/// Final normalization and vocabulary projection. Returns
/// `(logits, normed, inv_std)`.
pub(crate) fn output_head(x: &Matrix, params: &ModelParams) -> (Matrix, Matrix, Vec<f64>) {
    let (normed, inv_std) = layer_norm(x);
    let logits = normed.matmul(&params.output_projection);
    (logits, normed, inv_std)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrMode {
    Off,
    On,
}

impl std::str::FromStr for ScrMode {
    type Err = ScrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(ScrMode::On),
            "off" => Ok(ScrMode::Off),
            other => Err(ScrError::Config(format!("scr mode must be on|off, got {other:?}"))),
        }
    }
}

/// Everything one forward pass exposes to metrics and refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTrace {
    /// Embedding output `H_0`, `seq_len × d_model`.
    pub embedding: Matrix,
    /// Block outputs before realignment, one per layer.
    pub pre_blend: Vec<Matrix>,
    /// Block outputs after realignment (equal to `pre_blend` where inactive).
    pub hidden: Vec<Matrix>,
    /// `attention[layer][head]`, each `seq_len × seq_len`; inner lists are
    /// empty when the pass was run without keeping attention maps.
    pub attention: Vec<Vec<Matrix>>,
    /// Gate activations for layers that realigned.
    pub gates: Vec<Option<Matrix>>,
    pub logits: Matrix,
}

impl HiddenTrace {
    pub fn seq_len(&self) -> usize {
        self.embedding.rows()
    }

    pub fn final_hidden(&self) -> &Matrix {
        self.hidden.last().unwrap_or(&self.embedding)
    }

    /// Approximate bytes held by the trace's tensors.
    pub fn tensor_bytes(&self) -> usize {
        let mut n = self.embedding.len() + self.logits.len();
        n += self.pre_blend.iter().chain(&self.hidden).map(Matrix::len).sum::<usize>();
        n += self.attention.iter().flatten().map(Matrix::len).sum::<usize>();
        n += self.gates.iter().flatten().map(Matrix::len).sum::<usize>();
        n * std::mem::size_of::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub keep_attention: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { keep_attention: true }
    }
}

pub(crate) struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub final_normed: Matrix,
    pub final_inv_std: Vec<f64>,
}

/// Full forward pass with attention maps kept.
pub fn forward(
    tokens: &[TokenId],
    params: &ModelParams,
    mode: ScrMode,
    realign: &RealignConfig,
) -> Result<HiddenTrace> {
    forward_with(tokens, params, mode, realign, ForwardOptions::default())
}

pub fn forward_with(
    tokens: &[TokenId],
    params: &ModelParams,
    mode: ScrMode,
    realign: &RealignConfig,
    opts: ForwardOptions,
) -> Result<HiddenTrace> {
    let step = StepOptions { keep_attention: opts.keep_attention, keep_cache: false };
    Ok(forward_internal(tokens, params, mode, realign, step)?.0)
}

pub(crate) fn forward_internal(
    tokens: &[TokenId],
    params: &ModelParams,
    mode: ScrMode,
    realign: &RealignConfig,
    opts: StepOptions,
) -> Result<(HiddenTrace, Option<ForwardCache>)> {
    let cfg = &params.config;
    realign.validate()?;
    if mode == ScrMode::On && !params.has_gates() {
        return Err(ScrError::Config("realignment requested but the model has no gates".into()));
    }
    if tokens.is_empty() {
        return Err(ScrError::Input("empty token sequence".into()));
    }
    let embedding = embed(tokens, params)?;
    let seq_len = tokens.len();
    let mut pre_blend = Vec::with_capacity(cfg.n_layers);
    let mut hidden: Vec<Matrix> = Vec::with_capacity(cfg.n_layers);
    let mut attention = Vec::with_capacity(cfg.n_layers);
    let mut gates = Vec::with_capacity(cfg.n_layers);
    let mut caches = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let gate = (mode == ScrMode::On && scr::realignment_active(seq_len, realign, l)).then(|| &params.scr_gates[l]);
        let input = hidden.last().unwrap_or(&embedding);
        let step = layer_forward_with(input, layer, cfg, gate, opts)?;
        attention.push(step.attention);
        pre_blend.push(step.pre_blend);
        gates.push(step.alpha);
        hidden.push(step.output);
        if let Some(c) = step.cache {
            caches.push(c);
        }
    }
    let (logits, final_normed, final_inv_std) = output_head(hidden.last().unwrap_or(&embedding), params);
    logits.ensure_finite("logits")?;
    let cache = opts.keep_cache.then_some(ForwardCache { layers: caches, final_normed, final_inv_std });
    Ok((HiddenTrace { embedding, pre_blend, hidden, attention, gates, logits }, cache))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 16,
            positional_mode: PositionalMode::Learned,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(ScrError::Config(_))));
        let mut c = tiny_config();
        c.vocab_size = 1;
        assert!(c.validate().is_err());
        assert!(init_params(&tiny_config(), -1.0, 0).is_err());
    }

    #[test]
    fn zero_variance_gives_zero_weights() {
        let p = init_params(&tiny_config(), 0.0, 3).unwrap();
        for (name, t) in p.named_tensors() {
            assert!(t.as_slice().iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&tiny_config(), 0.02, 9).unwrap();
        let b = init_params(&tiny_config(), 0.02, 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(&tiny_config(), 0.02, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_biases_are_zero() {
        let p = init_params(&tiny_config(), 0.5, 1).unwrap();
        for l in &p.layers {
            assert!(l.b_f.as_slice().iter().all(|&v| v == 0.0));
            assert!(l.b_f2.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn embed_errors() {
        let p = init_params(&tiny_config(), 0.02, 1).unwrap();
        assert!(matches!(embed(&[11], &p), Err(ScrError::Input(_))));
        assert!(matches!(embed(&[0; 17], &p), Err(ScrError::Length { .. })));
    }

    #[test]
    fn single_token_attention_is_one() {
        let p = init_params(&tiny_config(), 0.3, 2).unwrap();
        let h = embed(&[4], &p).unwrap();
        let (maps, _) = self_attention(&h, &p.layers[0], 2).unwrap();
        for m in maps {
            assert_eq!(m.as_slice(), &[1.0]);
        }
    }

    #[test]
    fn attention_rejects_non_finite() {
        let p = init_params(&tiny_config(), 0.3, 2).unwrap();
        let mut h = embed(&[4, 1], &p).unwrap();
        h[(1, 3)] = f64::NAN;
        assert!(matches!(self_attention(&h, &p.layers[0], 2), Err(ScrError::Numeric(_))));
    }

    #[test]
    fn sinusoidal_positions_are_fixed() {
        let mut c = tiny_config();
        c.positional_mode = PositionalMode::Sinusoidal;
        let a = init_params(&c, 0.02, 1).unwrap();
        let b = init_params(&c, 0.02, 2).unwrap();
        assert_eq!(a.positional_embedding, b.positional_embedding);
        assert_eq!(a.positional_embedding[(0, 1)], 1.0);
        assert!(!a.is_trainable("positional_embedding"));
    }

    #[test]
    fn scr_on_without_gates_is_rejected() {
        let mut p = init_params(&tiny_config(), 0.02, 1).unwrap();
        p.scr_gates.clear();
        let r = forward(&[1, 2], &p, ScrMode::On, &RealignConfig::all_layers(2, 0, 0.1));
        assert!(matches!(r, Err(ScrError::Config(_))));
        assert!(forward(&[1, 2], &p, ScrMode::Off, &RealignConfig::default()).is_ok());
    }
}
