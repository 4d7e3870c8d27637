//! Minimal define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is created per step; [`Var`] handles record each operation
//! together with closures mapping the output gradient to each parent's
//! gradient. [`Tape::backward`] sweeps the record in reverse.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
