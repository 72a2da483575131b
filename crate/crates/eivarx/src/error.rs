//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EivarxError {
    /// A model failed validation (shape mismatch, unstable AR polynomial, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument was outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Not enough samples for the requested operation.
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A linear system could not be solved.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// The structural solve for the rotation matrix is ill-conditioned,
    /// which signals a wrong constraint count (or deficient excitation).
    #[error(
        "constraint structure inconsistent for d = {d} (row {row} condition {condition:.3e}); \
         likely wrong constraint count"
    )]
    WrongConstraintCount { d: usize, row: usize, condition: f64 },

    /// The order search rejected every candidate constraint count.
    #[error("no constraint structure found (deficient excitation or lag <= process order)")]
    NoConstraintStructure,

    /// An iterative procedure exhausted its iteration budget.
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    /// Constraint residuals carry essentially no power, so the noise
    /// variances cannot be estimated.
    #[error("constraint residuals are degenerate (residual covariance singular)")]
    DegenerateResiduals,
}

pub type Result<T> = std::result::Result<T, EivarxError>;
