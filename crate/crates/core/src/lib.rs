//! Desk-scale laboratory for probing the efficiency robustness of
//! autoregressive image captioners.
//!
//! The crate trains a small attention captioner on a synthetic shape dataset,
//! then crafts inputs that inflate its decode-loop count (and therefore its
//! latency), and measures the damage. The pieces:
//!
//! - [`autodiff`]: a minimal reverse-mode tape over `f64` tensors.
//! - [`captioner`]: encoder + attention GRU decoder with full decode tracing.
//! - [`datagen`]: deterministic colored-shapes scenes with multi-reference,
//!   variable-length captions.
//! - [`trainer`]: teacher-forcing maximum-likelihood training loop.
//! - [`attacks`]: the slowdown attack plus accuracy-attack and corruption
//!   baselines under shared perturbation budgets.
//! - [`metrics`]: loop/latency inflation, BLEU, and distribution exports.
//! - [`checkpoint`]: model serialization with shape and checksum validation.

pub mod attacks;
pub mod autodiff;
pub mod captioner;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod trainer;

pub use autodiff::{NodeId, Tape, Tensor};
pub use captioner::{CaptionModel, DecodeTrace, Hyper, Termination, Vocabulary};
pub use error::{Error, Result};
