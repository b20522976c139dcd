//! Loss providers: a tiny causal language model over token batches and an
//! analytic quadratic task family.

mod batch;
mod lm;
mod quadratic;

pub use batch::{TokenBatch, PAD_ID};
pub use lm::{LmForward, TinyLm, TinyLmConfig};
pub use quadratic::{quadratic_loss, QuadraticTaskSpec};

use thiserror::Error;

use crate::diffcore::DiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch has no non-pad next-token targets")]
    EmptyBatch,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("batch width {width} exceeds context length {context_len}")]
    TooLong { width: usize, context_len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid quadratic task: {0}")]
    InvalidQuadratic(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
