use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum BlmpcError {
    /// A covariance (or precision) matrix failed its Cholesky factorization.
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    /// A natural second-moment parameter is not negative definite.
    #[error("natural parameter eta2 is not negative definite")]
    NotNegativeDefinite,

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A scalar or structural parameter violates its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Forward integration produced a non-finite state.
    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },

    /// A control was requested outside the planning horizon.
    #[error("time {tau} outside horizon [{start}, {end}]")]
    OutsideHorizon { tau: f64, start: f64, end: f64 },

    /// An operation that needs at least one sample received none.
    #[error("empty batch")]
    EmptyBatch,

    /// Every sample had a non-finite probe; no gradient information remains.
    #[error("all samples flagged non-finite during gradient estimation")]
    AllSamplesFlagged,

    /// A BLR step would leave the valid natural-parameter set.
    #[error("update step rejected: new precision is not positive definite")]
    StepRejected,

    /// Step rejection persisted through every learning-rate halving.
    #[error("update step rejected after {halvings} learning-rate halvings")]
    StepRejectionExhausted { halvings: u32 },

    /// The quadrature grid does not contain the integrand's mass.
    #[error("quadrature boundary mass check failed: {0}")]
    BoundaryMass(String),

    /// Importance weights all underflowed to zero.
    #[error("particle weights underflowed to zero (cost scale mismatch)")]
    WeightUnderflow,

    /// Closed-loop execution diverged; partial history is available.
    #[error("closed-loop execution diverged in round {round}")]
    ExecutionDiverged { round: usize },
}

pub type Result<T> = std::result::Result<T, BlmpcError>;

impl BlmpcError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        BlmpcError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
