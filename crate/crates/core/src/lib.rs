//! Desk-scale decoder-only transformer with structured context recomposition:
//! per-layer probabilistic gates that blend each layer's output with its
//! input, trained alongside the language model through an auxiliary
//! coherence loss.
//!
//! Modules:
//! - [`model`]: transformer substrate, sampling, checkpoints
//! - [`scr`]: gates, reweighting, coherence loss, threshold rule, refinement
//! - [`train`]: combined loss, reverse-mode gradients, finite-difference checker, SGD
//! - [`metrics`]: perplexity and the coherence/drift/entropy/attention metrics
//! - [`data`]: character vocabulary, synthetic corpora, batching
//! - [`harness`]: declarative experiments and report emission

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod par;
pub mod scr;
pub mod tensor;
pub mod train;

pub use error::{Result, ScrError};
