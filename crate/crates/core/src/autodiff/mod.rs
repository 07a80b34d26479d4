//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass and dropped after its
//! gradients have been read. It is not shared between threads; independent
//! tapes can run in parallel.

mod tape;
mod tensor;

pub use tape::{Axis, GradientMap, NodeId, Tape, RMS_EPS};
pub use tensor::Tensor;
