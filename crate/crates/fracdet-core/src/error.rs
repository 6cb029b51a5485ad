//! Error type shared by every operator in the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Result alias used throughout the tensor engine.
pub type Result<T> = core::result::Result<T, TensorError>;

/// Errors emitted by tensor construction, operators and the autodiff graph.
///
/// Non-finite values are an error condition, never a silent output: every
/// operator validates its result and reports `NonFinite` instead of letting
/// a NaN or infinity propagate.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// Flat data length does not match the product of the shape extents.
    DataLength { expected: usize, got: usize },
    /// An operator was handed tensors whose shapes cannot be combined.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A shape or argument is invalid for the operator (zero extent,
    /// axis out of bounds, bad stride, ...).
    InvalidArgument { op: &'static str, message: String },
    /// A pooling window resolved to zero elements.
    EmptyWindow { op: &'static str },
    /// An operator produced a NaN or infinity.
    NonFinite { op: &'static str },
    /// `backward` was called on a tensor that is not a scalar.
    LossNotScalar { shape: Vec<usize> },
    /// The training loop hit a non-finite loss; carries the epochs completed.
    Diverged { epoch: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
            TensorError::EmptyWindow { op } => write!(f, "{op}: pooling window is empty"),
            TensorError::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            TensorError::LossNotScalar { shape } => {
                write!(f, "backward: loss must be a scalar, got shape {shape:?}")
            }
            TensorError::Diverged { epoch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}")
            }
        }
    }
}

impl core::error::Error for TensorError {}
