use thiserror::Error;

/// Errors raised by the filter stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: max asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("covariance not repairable: most negative eigenvalue {min_eigenvalue:.3e} below -{threshold:.3e}")]
    NotRepairable { min_eigenvalue: f64, threshold: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("range-bearing measurement undefined near the origin (range {range:.3e} m)")]
    OriginSingularity { range: f64 },

    #[error("degenerate sigma rule: n_x + lambda = {n_plus_lambda:.3e} must be positive")]
    DegenerateRule { n_plus_lambda: f64 },

    #[error("innovation covariance numerically singular (condition estimate {condition:.3e})")]
    SingularInnovation { condition: f64 },

    #[error("transfer packet valid for step {valid_for} cannot be consumed at step {step}")]
    StalePacket { valid_for: usize, step: usize },

    #[error("fused covariance sum is singular")]
    SingularSum,

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op} requires a {expected} belief, got {got}")]
    StageMismatch {
        op: &'static str,
        expected: &'static str,
        got: &'static str,
    },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
