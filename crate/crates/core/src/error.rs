//! Error type shared across the crate.
//!
//! Errors split into two broad classes. `Invalid` covers bad arguments,
//! shapes, parameters, and malformed input files; these are caller
//! mistakes. The remaining variants describe numerical conditions under
//! which a procedure cannot continue (degenerate eigenvalue splits,
//! empty candidate sets, failed root finding). Front ends use
//! [`RidgeError::is_invalid`] to map the two classes onto distinct
//! process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RidgeError {
    /// Bad arguments, shapes, parameters, or file contents.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Malformed record in a CSV input, with its 1-based file line.
    #[error("csv line {line}: {reason}")]
    CsvRow { line: u64, reason: String },

    /// The eigenvalue split at position `r` falls inside a degenerate
    /// group, so the trailing eigenspace is not identifiable.
    #[error("eigen gap at split {r} is {gap:.6e}, below tolerance {tol:.6e}")]
    EigenGap { r: usize, gap: f64, tol: f64 },

    /// No grid node qualifies for the bootstrap candidate set.
    #[error("empty candidate set: increase rho_n or refine the grid")]
    EmptyCandidates,

    /// A numerical procedure could not proceed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RidgeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        RidgeError::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        RidgeError::Numerical(msg.into())
    }

    /// True when the error is a caller mistake rather than a numerical
    /// condition discovered mid-computation.
    pub fn is_invalid(&self) -> bool {
        matches!(
            self,
            RidgeError::Invalid(_)
                | RidgeError::CsvRow { .. }
                | RidgeError::Io(_)
                | RidgeError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, RidgeError>;
