//! Central finite-difference verification of analytic gradients.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward_with, batch_loss, effective_mode, BackwardOptions};
use crate::data::Example;
use crate::error::{Result, ScrError};
use crate::model::{self, ModelParams, StepOptions};
use crate::par;
use crate::scr::RealignConfig;

/// A scalar function of the model parameters with a claimed gradient.
pub trait Objective: Sync {
    fn loss(&self, params: &ModelParams) -> Result<f64>;
    fn gradient(&self, params: &ModelParams) -> Result<ModelParams>;

    /// Identifies the smooth piece of a piecewise-smooth objective that
    /// contains `params`. A difference stencil whose end points land in other
    /// pieces is shrunk until it does not.
    fn region(&self, _params: &ModelParams) -> Result<u64> {
        Ok(0)
    }
}

/// The batch-mean combined objective of the model.
pub struct ModelObjective<'a> {
    pub batch: &'a [Example],
    pub realign: &'a RealignConfig,
}

impl Objective for ModelObjective<'_> {
    fn loss(&self, params: &ModelParams) -> Result<f64> {
        Ok(batch_loss(params, self.batch, self.realign)?.total)
    }

    fn gradient(&self, params: &ModelParams) -> Result<ModelParams> {
        Ok(backward_with(params, self.batch, self.realign, BackwardOptions::default())?.1)
    }

    /// Hash of every ReLU's on/off state over the batch.
    fn region(&self, params: &ModelParams) -> Result<u64> {
        let mode = effective_mode(params);
        let opts = StepOptions { keep_attention: false, keep_cache: true };
        let mut hasher = DefaultHasher::new();
        for (x, _) in self.batch {
            let (_, cache) = model::forward_internal(x, params, mode, self.realign, opts)?;
            for lc in cache.expect("cache requested").layers {
                for chunk in lc.ff_pre.as_slice().chunks(64) {
                    let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, &z)| acc | (u64::from(z > 0.0) << i));
                    bits.hash(&mut hasher);
                }
            }
        }
        Ok(hasher.finish())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Half-width of the central difference stencil.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked in full.
    pub samples_per_tensor: usize,
    /// Gate projections are checked in full when set.
    pub all_gate_coordinates: bool,
    /// Denominator floor of the relative error. At `step = 1e-5` the stencil
    /// cannot resolve gradients much below this in f64.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tol: 1e-4, samples_per_tensor: 200, all_gate_coordinates: true, abs_floor: 1e-5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose stencil had to shrink to stay in one smooth piece.
    pub shrunk_stencils: usize,
    pub per_tensor: Vec<TensorCheck>,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

const MAX_SHRINKS: usize = 8;

/// Compares `objective.gradient` with central differences on sampled
/// coordinates of every trainable tensor.
pub fn check_objective<O: Objective>(
    objective: &O,
    params: &ModelParams,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) {
        return Err(ScrError::Config("finite-difference step must be positive".into()));
    }
    let grads = objective.gradient(params)?;
    let base_region = objective.region(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let named = params.named_tensors();
    let mut coords = Vec::new();
    for (ti, (name, t)) in named.iter().enumerate() {
        if !params.is_trainable(name) {
            continue;
        }
        let full = t.len() <= opts.samples_per_tensor || (opts.all_gate_coordinates && name.starts_with("scr_gates."));
        if full {
            coords.extend((0..t.len()).map(|k| (ti, k)));
        } else {
            let mut picks = index::sample(&mut rng, t.len(), opts.samples_per_tensor).into_vec();
            picks.sort_unstable();
            coords.extend(picks.into_iter().map(|k| (ti, k)));
        }
    }

    let perturbed = |ti: usize, k: usize, delta: f64| -> ModelParams {
        let mut p = params.clone();
        let mut tensors = p.named_tensors_mut();
        tensors[ti].1.as_mut_slice()[k] += delta;
        drop(tensors);
        p
    };

    let results = par::map_slice(&coords, |&(ti, k)| -> Result<(f64, bool)> {
        let mut h = opts.step;
        let mut shrunk = false;
        for attempt in 0..=MAX_SHRINKS {
            let plus = perturbed(ti, k, h);
            let minus = perturbed(ti, k, -h);
            let smooth = objective.region(&plus)? == base_region && objective.region(&minus)? == base_region;
            if smooth || attempt == MAX_SHRINKS {
                let numeric = (objective.loss(&plus)? - objective.loss(&minus)?) / (2.0 * h);
                let analytic = grads.named_tensors()[ti].1.as_slice()[k];
                return Ok((relative_error(analytic, numeric, opts.abs_floor), shrunk));
            }
            shrunk = true;
            h /= 10.0;
        }
        unreachable!()
    });

    let mut per_tensor: Vec<TensorCheck> = Vec::new();
    let mut shrunk_stencils = 0;
    for (&(ti, k), r) in coords.iter().zip(results) {
        let (err, shrunk) = r?;
        shrunk_stencils += usize::from(shrunk);
        let name = &named[ti].0;
        match per_tensor.last_mut() {
            Some(tc) if &tc.name == name => {
                tc.checked += 1;
                if err > tc.max_rel_error {
                    tc.max_rel_error = err;
                    tc.worst_index = k;
                }
            }
            _ => per_tensor.push(TensorCheck { name: name.clone(), checked: 1, max_rel_error: err, worst_index: k }),
        }
    }
    let worst = per_tensor
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .cloned()
        .unwrap_or(TensorCheck { name: String::new(), checked: 0, max_rel_error: 0.0, worst_index: 0 });
    Ok(GradCheckReport {
        max_rel_error: worst.max_rel_error,
        worst_tensor: worst.name,
        worst_index: worst.worst_index,
        checked: coords.len(),
        shrunk_stencils,
        passed: worst.max_rel_error <= opts.tol,
        per_tensor,
    })
}

/// Finite-difference check of [`super::backward`] on `batch`.
pub fn finite_diff_check(
    params: &ModelParams,
    batch: &[Example],
    realign: &RealignConfig,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let opts = GradCheckOptions { step, tol, ..GradCheckOptions::default() };
    check_objective(&ModelObjective { batch, realign }, params, &opts)
}
