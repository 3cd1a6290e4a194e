//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] lives for exactly one forward/backward pass. Model parameters
//! are owned outside the tape and re-registered on every pass with
//! [`Tape::param`] (trainable) or [`Tape::constant`] (frozen).

mod adam;
mod tape;
mod tensor;


use thiserror::Error;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::pairwise_sq_dist;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

pub type Result<T> = std::result::Result<T, AdError>;
