//! Toy neural image captioner: a patch-embedding MLP encoder feeding an
//! additive-attention GRU decoder that emits tokens greedily until EOS or a
//! length cap, with every decode fully traced and differentiable back to the
//! input pixels.

mod forward;
mod model;
mod trace;
mod vocab;

pub use forward::{greedy_decode, teacher_forced_logits, TapedModel};
pub use model::{CaptionModel, Hyper, Params};
pub use trace::{DecodeTrace, Termination, TraceSummary};
pub use vocab::Vocabulary;
