//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! The engine records every operation on a [`Tape`] in execution order (so the
//! tape is trivially topological) and replays it in exact reverse order during
//! [`Tape::backward`]. It provides only the operations the captioner, the
//! losses, and the attacks need; there is no broadcasting beyond
//! scalar-with-tensor, no views, and no in-place mutation of recorded tensors.
//!
//! A tape and its nodes are confined to one thread. Distinct tapes may run
//! concurrently, sharing read-only parameter tensors.

mod kernels;
mod tape;
mod tensor;

pub mod gradcheck;

pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use kernels::{argmax, softmax_lane, to_image_scalar};
