//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by the tensor/autodiff substrate.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// An op received tensors whose dims cannot be combined.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An op produced (or was fed) a non-finite value.
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },
    /// A caller violated an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Errors raised by training loops and the flow engine.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    /// Training loss left the finite range; carries recent history for diagnosis.
    #[error("non-finite loss at step {step} (lr {lr}); last losses: {history:?}")]
    NonFiniteLoss {
        step: u64,
        lr: f64,
        history: Vec<f64>,
    },
    /// Euler integration produced a non-finite state.
    #[error("non-finite ODE state at step {step}")]
    NonFiniteState { step: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Errors raised by file formats and dataset I/O.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl IoError {
    pub fn file(path: impl Into<String>, source: std::io::Error) -> Self {
        IoError::File {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        IoError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
