//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by possibility operations, the fit solver, filters, and
/// the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix required to be symmetric is not, beyond tolerance.
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,

    /// Cholesky factorization failed: the matrix is not positive definite.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// A matrix required to be positive semi-definite has a significantly
    /// negative eigenvalue.
    #[error("matrix is not positive semi-definite")]
    NotPositiveSemidefinite,

    /// A matrix required to be invertible is singular or too ill-conditioned.
    #[error("matrix is singular or numerically singular")]
    SingularMatrix,

    /// The covariance does not exist because the precision matrix is singular.
    #[error("covariance unavailable: precision matrix is singular")]
    CovarianceUnavailable,

    /// The determinant-maximization problem has no finite optimum: the
    /// constraints do not bound the precision in every direction.
    #[error("precision fit is unbounded: constraints do not bound every direction")]
    UnboundedProblem,

    /// The fit solver exceeded its iteration budget.
    #[error("fit solver exceeded the maximum number of iterations")]
    MaxIterations,

    /// An ensemble violates its structural invariants.
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    /// An experiment configuration failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Result files could not be written or read.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Configuration JSON could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
