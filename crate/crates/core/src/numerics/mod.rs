//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod kernels;
mod tape;
mod tensor;

pub use kernels::{gelu, sigmoid};
pub use tape::{bce_value, clamp_prob, Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("numeric error: {0}")]
    NonFinite(&'static str),
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;
