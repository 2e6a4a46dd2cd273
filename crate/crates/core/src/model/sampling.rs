use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_with, ForwardOptions, ModelParams, ScrMode, TokenId};
use crate::error::{Result, ScrError};
use crate::scr::RealignConfig;
use crate::tensor::softmax;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingStrategy {
    Greedy,
    TopK(usize),
    Nucleus(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingConfig {
    pub strategy: DecodingStrategy,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self { strategy: DecodingStrategy::Greedy, temperature: 1.0, seed: 0 }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ScrError::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        match self.strategy {
            DecodingStrategy::TopK(0) => Err(ScrError::Config("top_k needs k >= 1".into())),
            DecodingStrategy::Nucleus(p) if !(p > 0.0 && p <= 1.0) => {
                Err(ScrError::Config(format!("nucleus p must lie in (0, 1], got {p}")))
            }
            _ => Ok(()),
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// The renormalized candidate set a strategy samples from, most probable
/// first. Ties keep the lower token id first.
pub fn candidate_distribution(logits: &[f64], decoding: &DecodingConfig) -> Result<Vec<(TokenId, f64)>> {
    decoding.validate()?;
    if logits.is_empty() {
        return Err(ScrError::Input("empty logits row".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ScrError::Numeric("logits row".into()));
    }
    if decoding.strategy == DecodingStrategy::Greedy {
        return Ok(vec![(argmax(logits), 1.0)]);
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v / decoding.temperature).collect();
    let probs = softmax(&scaled);
    let mut order: Vec<TokenId> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let keep = match decoding.strategy {
        DecodingStrategy::TopK(k) => k.min(order.len()),
        DecodingStrategy::Nucleus(p) => {
            let mut mass = 0.0;
            let mut n = order.len();
            for (i, &t) in order.iter().enumerate() {
                mass += probs[t];
                if mass >= p {
                    n = i + 1;
                    break;
                }
            }
            n
        }
        DecodingStrategy::Greedy => unreachable!(),
    };
    let total: f64 = order[..keep].iter().map(|&t| probs[t]).sum();
    Ok(order[..keep].iter().map(|&t| (t, probs[t] / total)).collect())
}

/// Draws the next token from one row of logits.
pub fn sample_next(logits: &[f64], decoding: &DecodingConfig, rng: &mut ChaCha8Rng) -> Result<TokenId> {
    let candidates = candidate_distribution(logits, decoding)?;
    if candidates.len() == 1 {
        return Ok(candidates[0].0);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(t, p) in &candidates {
        acc += p;
        if u < acc {
            return Ok(t);
        }
    }
    Ok(candidates[candidates.len() - 1].0)
}

/// Extends `prompt` by `n_tokens` sampled tokens.
pub fn generate(
    prompt: &[TokenId],
    n_tokens: usize,
    params: &ModelParams,
    mode: ScrMode,
    realign: &RealignConfig,
    decoding: &DecodingConfig,
) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(ScrError::Input("generation needs a non-empty prompt".into()));
    }
    let max = params.config.max_seq_len;
    if prompt.len() + n_tokens > max {
        return Err(ScrError::Length { len: prompt.len() + n_tokens, max });
    }
    decoding.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(decoding.seed);
    let mut tokens = prompt.to_vec();
    let opts = ForwardOptions { keep_attention: false };
    for _ in 0..n_tokens {
        let trace = forward_with(&tokens, params, mode, realign, opts)?;
        let last = trace.logits.row(trace.logits.rows() - 1);
        tokens.push(sample_next(last, decoding, &mut rng)?);
    }
    Ok(tokens)
}
