//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by the numerical kernels, the problem model and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Elimination met a pivot that vanishes to working precision.
    #[error("matrix is singular to working precision at pivot {pivot}")]
    Singular { pivot: usize },

    /// An adaptive routine ran out of budget before meeting its tolerance.
    #[error("accuracy target not reached (achieved estimate {estimate:e})")]
    Accuracy { estimate: f64 },

    /// An argument lies outside the domain of the operation.
    #[error("argument outside domain: {0}")]
    Domain(String),

    /// A documented precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A problem or configuration field failed validation.
    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// The adaptive ODE integrator could not make progress.
    #[error("step size underflow at t = {t}; the problem looks stiff, use the quadrature route")]
    Stiffness { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), reason: reason.into() }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
