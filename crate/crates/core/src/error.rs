use thiserror::Error;

/// Errors raised by the frame, solver and tracking routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The synthesis matrix does not have full row rank; the evaluation
    /// point lies outside the frame domain.
    #[error("rank deficient synthesis matrix (smallest singular value {smallest:e}, largest {largest:e})")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("frame jet was evaluated without second-order partials")]
    MissingSecondOrder,

    #[error("finite-difference step must be positive and finite")]
    InvalidStep,

    #[error("no grid point lies inside the frame domain")]
    EmptyDomain,

    #[error("iteration left the frame domain")]
    LeftDomain,

    #[error("Hessian could not be regularized (shift reached {shift:e})")]
    SingularHessian { shift: f64 },

    /// Target coincides with a transmitter or receiver.
    #[error("point within {distance:e} of a transmitter or receiver (tolerance {tolerance:e})")]
    NearSingular { distance: f64, tolerance: f64 },

    #[error("every shooting candidate left the frame domain")]
    AllCandidatesFailed,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
