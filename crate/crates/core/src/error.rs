use thiserror::Error;

/// Errors raised by the fitting pipeline and its numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GemError {
    #[error("invalid range: lower bound {lo} exceeds upper bound {hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("trace must be positive, got {0}")]
    DegenerateTrace(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),

    #[error("matrix is not positive definite")]
    NotPd,

    #[error("requested rank {rank} exceeds dimension {dim}")]
    InvalidRank { rank: usize, dim: usize },

    #[error("infeasible: {k} clusters requested for {n} observations")]
    Infeasible { k: usize, n: usize },

    #[error("all responsibilities are zero")]
    DegenerateWeights,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("label {label} out of range for {k} clusters")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("graphical lasso did not converge after {iterations} sweeps (last change {last_change:.3e}, target {target:.3e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        target: f64,
    },

    #[error("every start failed; last error: {0}")]
    AllStartsFailed(Box<GemError>),
}

pub type Result<T> = std::result::Result<T, GemError>;
