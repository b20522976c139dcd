//! Dense tensors, a first-order reverse-mode tape, named parameter sets and
//! a central-difference gradient oracle.

mod fd;
mod params;
mod tape;
mod tensor;

pub use fd::{finite_difference_gradient, relative_error};
pub use params::ParamSet;
pub use tape::{Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("{op}: incompatible operand shapes {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: index {index} out of range for extent {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: expected {expected} operands, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("masked mean over an all-zero mask")]
    EmptyMask,
    #[error("variable {0} is not on this tape")]
    UnknownVar(usize),
    #[error("backward needs a one-element output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("flat vector has {got} entries, parameter set expects {expected}")]
    FlatLength { expected: usize, got: usize },
    #[error("finite-difference step must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("objective evaluated to {value} at coordinate {coordinate}")]
    NonFiniteObjective { coordinate: usize, value: f64 },
}
