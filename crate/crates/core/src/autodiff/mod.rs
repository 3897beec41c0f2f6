//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations return [`Var`]
//! handles; [`Tape::backward`] then propagates from a scalar loss.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use tape::{BatchNormStats, Gradients, Indices, Tape, Var};
pub use tensor::Tensor;
