//! Structured context recomposition: per-layer probabilistic gates that blend
//! each layer's output with the previous layer's hidden state.
//!
//! For layer `l` with output `H_l` and input `H_{l-1}`:
//!
//! ```text
//! alpha_l = sigmoid(H_l · W_pᵀ + epsilon)
//! H̃_l     = alpha_l ⊙ H_l + (1 - alpha_l) ⊙ H_{l-1}
//! L_coh   = Σ_i ‖H̃_{l,i} - H_{l-1,i}‖²
//! ```
//!
//! Realignment only runs on layers listed in [`RealignConfig::enabled_layers`]
//! and only for sequences at least [`RealignConfig::activation_threshold`]
//! tokens long. Below the threshold the layer output passes through untouched,
//! so the result is bitwise identical to a model without gates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScrError};
use crate::model::{self, HiddenTrace, ModelParams};
use crate::tensor::{sigmoid, Matrix};

/// Learnable gate for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// `d_model × d_model` gate projection.
    pub w_p: Matrix,
    /// Uniform bias added to every gate pre-activation. Not trained.
    pub epsilon: f64,
}

impl GateParams {
    pub fn zeros(d_model: usize) -> Self {
        Self { w_p: Matrix::zeros(d_model, d_model), epsilon: 0.0 }
    }

    pub fn validate(&self, d_model: usize) -> Result<()> {
        self.w_p.ensure_shape(d_model, d_model, "gate projection")?;
        self.w_p.ensure_finite("gate projection")?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ScrError::Config(format!("gate epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealignConfig {
    /// Realignment runs only when the sequence has at least this many tokens.
    pub activation_threshold: usize,
    /// Weight of the summed coherence losses in the training objective.
    pub lambda_coh: f64,
    /// Zero-based indices of layers that carry an active gate.
    pub enabled_layers: BTreeSet<usize>,
}

impl Default for RealignConfig {
    fn default() -> Self {
        Self { activation_threshold: 0, lambda_coh: 0.1, enabled_layers: BTreeSet::new() }
    }
}

impl RealignConfig {
    /// Gates on every one of `n_layers` layers.
    pub fn all_layers(n_layers: usize, activation_threshold: usize, lambda_coh: f64) -> Self {
        Self { activation_threshold, lambda_coh, enabled_layers: (0..n_layers).collect() }
    }

    /// No layer realigns.
    pub fn disabled() -> Self {
        Self { activation_threshold: 0, lambda_coh: 0.0, enabled_layers: BTreeSet::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_coh >= 0.0 && self.lambda_coh.is_finite()) {
            return Err(ScrError::Config(format!("lambda_coh must be finite and >= 0, got {}", self.lambda_coh)));
        }
        Ok(())
    }
}

/// Whether layer `layer_index` realigns a sequence of `seq_len` tokens.
/// The threshold is inclusive.
pub fn realignment_active(seq_len: usize, config: &RealignConfig, layer_index: usize) -> bool {
    seq_len >= config.activation_threshold && config.enabled_layers.contains(&layer_index)
}

/// Gate pre-activation `H · W_pᵀ + epsilon`.
pub(crate) fn gate_preactivation(h: &Matrix, gate: &GateParams) -> Result<Matrix> {
    let d = h.cols();
    gate.w_p.ensure_shape(d, d, "gate projection")?;
    let mut pre = h.matmul_t(&gate.w_p);
    if gate.epsilon != 0.0 {
        pre.as_mut_slice().iter_mut().for_each(|v| *v += gate.epsilon);
    }
    Ok(pre)
}

/// Gate logits are clamped to `±GATE_LOGIT_LIMIT`. Past roughly 37 the
/// logistic function rounds to exactly 1 in f64, so the clamp keeps every
/// gate strictly inside `(0, 1)`.
pub const GATE_LOGIT_LIMIT: f64 = 30.0;

/// `alpha = sigmoid(H · W_pᵀ + epsilon)`, elementwise.
pub fn gate_activation(h: &Matrix, gate: &GateParams) -> Result<Matrix> {
    h.ensure_finite("gate input")?;
    Ok(gate_preactivation(h, gate)?.map(|z| sigmoid(z.clamp(-GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT))))
}

/// `d alpha / d logit` given `alpha`; zero where the logit was clamped.
pub(crate) fn gate_slope(a: f64) -> f64 {
    if a <= sigmoid(-GATE_LOGIT_LIMIT) || a >= sigmoid(GATE_LOGIT_LIMIT) {
        0.0
    } else {
        a * (1.0 - a)
    }
}

/// One entry of the convex blend `a·x + (1 - a)·y`.
///
/// Evaluated as `x - (1 - a)(x - y)` when `a >= 0.5` and as `y + a(x - y)`
/// otherwise. Both branches give `x` exactly at `a = 1`, `y` exactly at
/// `a = 0`, and `y` exactly when `x == y`, and neither can leave the interval
/// spanned by `x` and `y`.
#[inline]
pub(crate) fn blend(a: f64, x: f64, y: f64) -> f64 {
    let diff = x - y;
    if a >= 0.5 {
        x - (1.0 - a) * diff
    } else {
        y + a * diff
    }
}

/// `H̃ = alpha ⊙ H_l + (1 - alpha) ⊙ H_prev`.
pub fn contextual_reweight(alpha: &Matrix, h: &Matrix, h_prev: &Matrix) -> Result<Matrix> {
    alpha.same_shape(h, "layer output vs gate")?;
    alpha.same_shape(h_prev, "previous hidden state vs gate")?;
    let data =
        alpha.as_slice().iter().zip(h.as_slice()).zip(h_prev.as_slice()).map(|((&a, &x), &y)| blend(a, x, y)).collect();
    Matrix::from_vec(h.rows(), h.cols(), data)
}

/// `Σ_i ‖H̃_i - H_prev_i‖²`.
pub fn coherence_loss(h_tilde: &Matrix, h_prev: &Matrix) -> Result<f64> {
    h_tilde.same_shape(h_prev, "coherence loss operands")?;
    let mut total = 0.0;
    for i in 0..h_tilde.rows() {
        let row: f64 = h_tilde.row(i).iter().zip(h_prev.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        total += row;
    }
    Ok(total)
}

/// Applies realignment to a finished trace as a post-processing step.
///
/// Layers before the first active one are reused from `trace`. From the first
/// active layer on, the stored pre-blend output is gated and every later layer
/// and the logits are recomputed. For an SCR-off trace this reproduces a
/// forward pass with SCR on, bit for bit.
pub fn inference_refinement(trace: &HiddenTrace, params: &ModelParams, config: &RealignConfig) -> Result<HiddenTrace> {
    let cfg = &params.config;
    let n_layers = cfg.n_layers;
    if trace.hidden.len() != n_layers || trace.pre_blend.len() != n_layers || trace.gates.len() != n_layers {
        return Err(ScrError::Consistency(format!("trace has {} layers, model has {n_layers}", trace.hidden.len())));
    }
    if trace.embedding.cols() != cfg.d_model || trace.logits.cols() != cfg.vocab_size {
        return Err(ScrError::Consistency("trace widths do not match model dimensions".into()));
    }
    let seq_len = trace.seq_len();
    let first = (0..n_layers).find(|&l| realignment_active(seq_len, config, l));
    let Some(first) = first else {
        return Ok(trace.clone());
    };
    if params.scr_gates.len() != n_layers {
        return Err(ScrError::Consistency("model carries no realignment gates".into()));
    }

    let mut out = trace.clone();
    let prev = if first == 0 { &trace.embedding } else { &trace.hidden[first - 1] };
    let gate = &params.scr_gates[first];
    let alpha = gate_activation(&trace.pre_blend[first], gate)?;
    let h_tilde = contextual_reweight(&alpha, &trace.pre_blend[first], prev)?;
    out.gates[first] = Some(alpha);
    out.hidden[first] = h_tilde;

    let keep_attention = trace.attention.iter().all(|a| !a.is_empty());
    for l in first + 1..n_layers {
        let active_gate = realignment_active(seq_len, config, l).then(|| &params.scr_gates[l]);
        let step = model::layer_forward(&out.hidden[l - 1], &params.layers[l], cfg, active_gate)?;
        out.attention[l] = if keep_attention { step.attention } else { Vec::new() };
        out.pre_blend[l] = step.pre_blend;
        out.gates[l] = step.alpha;
        out.hidden[l] = step.output;
    }
    out.logits = model::output_head(&out.hidden[n_layers - 1], params).0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_projection_gives_half() {
        let h = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
        let alpha = gate_activation(&h, &GateParams::zeros(2)).unwrap();
        assert!(alpha.as_slice().iter().all(|&a| a == 0.5));
    }

    #[test]
    fn identity_projection_hand_value() {
        let h = Matrix::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap();
        let gate = GateParams { w_p: Matrix::identity(2), epsilon: 0.0 };
        let alpha = gate_activation(&h, &gate).unwrap();
        assert_eq!(alpha[(0, 0)], 0.5);
        assert!((alpha[(0, 1)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn saturated_projection_stops_just_below_one() {
        let h = Matrix::from_rows(&[vec![0.5, 2.0, 0.1]]).unwrap();
        let mut w = Matrix::identity(3);
        w.scale(1e4);
        let alpha = gate_activation(&h, &GateParams { w_p: w.clone(), epsilon: 0.0 }).unwrap();
        assert!(alpha.as_slice().iter().all(|&a| a == sigmoid(GATE_LOGIT_LIMIT) && a < 1.0 && 1.0 - a < 1e-13));
        w.scale(-1.0);
        let alpha = gate_activation(&h, &GateParams { w_p: w, epsilon: 0.0 }).unwrap();
        assert!(alpha.as_slice().iter().all(|&a| a > 0.0 && a < 1e-13));
    }

    #[test]
    fn gate_rejects_wrong_width() {
        let h = Matrix::zeros(2, 3);
        assert!(matches!(gate_activation(&h, &GateParams::zeros(2)), Err(ScrError::Shape(_))));
    }

    #[test]
    fn reweight_extremes_and_arithmetic() {
        let h = Matrix::from_rows(&[vec![4.0, -1.5]]).unwrap();
        let prev = Matrix::from_rows(&[vec![0.0, 2.25]]).unwrap();
        let ones = Matrix::filled(1, 2, 1.0);
        let zeros = Matrix::zeros(1, 2);
        assert_eq!(contextual_reweight(&ones, &h, &prev).unwrap(), h);
        assert_eq!(contextual_reweight(&zeros, &h, &prev).unwrap(), prev);
        let quarter = Matrix::filled(1, 2, 0.25);
        let out = contextual_reweight(&quarter, &h, &prev).unwrap();
        assert_eq!(out[(0, 0)], 1.0);
    }

    #[test]
    fn reweight_shape_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(contextual_reweight(&a, &a, &b), Err(ScrError::Shape(_))));
        assert!(matches!(coherence_loss(&a, &b), Err(ScrError::Shape(_))));
    }

    #[test]
    fn coherence_loss_values() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let z = Matrix::zeros(1, 2);
        assert_eq!(coherence_loss(&a, &z).unwrap(), 1.0);
        assert_eq!(coherence_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut cfg = RealignConfig::all_layers(2, 4096, 0.1);
        assert!(!realignment_active(512, &cfg, 0));
        assert!(realignment_active(4096, &cfg, 1));
        assert!(!realignment_active(4096, &cfg, 2));
        cfg.activation_threshold = 0;
        assert!(realignment_active(0, &cfg, 0));
    }
}
