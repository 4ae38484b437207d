//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! then walks the records once in reverse. Model parameters live in a
//! [`ParamStore`] outside the tape and are bound onto each fresh tape as
//! trainable or frozen leaves.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{check_gradients, check_gradients_with};
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar([usize; 2]),
}
