//! Error type shared by every module of the solver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside the supported range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative linear solver stopped before reaching its tolerance.
    #[error("{context}: no convergence after {iterations} iterations \
             (relative residual {residual:.3e}, tolerance {tolerance:.3e})")]
    ConvergenceFailure {
        context: String,
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// The nonlinear iteration of the starting step stalled.
    #[error("first step iteration stalled: relative increment {increment:.3e} \
             after {iterations} sweeps")]
    FirstStepFailure { increment: f64, iterations: usize },

    /// A runtime invariant that the schemes guarantee was violated.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// A run configuration failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for unusable input, 3 for solver or i/o
    /// failures, 4 for violated scheme invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Json(_) => 2,
            Error::ConvergenceFailure { .. } | Error::FirstStepFailure { .. } | Error::Io(_) => 3,
            Error::InvariantViolation(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
