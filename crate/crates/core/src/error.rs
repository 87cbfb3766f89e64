use thiserror::Error;

use crate::curveframe::Rigidity;

/// Errors raised by the library operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("boundary data admits no deformable ribbon ({0:?})")]
    Degenerate(Rigidity),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("width {eps:e} exceeds the injectivity bound {max:e}")]
    WidthTooLarge { eps: f64, max: f64 },

    #[error("inversion of the ruling chart failed at x = ({x1}, {x2})")]
    ChartInversion { x1: f64, x2: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit code: 2 validation, 3 infeasible or rigid data, 4 numeric
    /// precondition, 5 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGrid(_) | Error::NonFinite(_) | Error::LengthMismatch { .. } | Error::InvalidRotation(_) => 2,
            Error::Degenerate(_) => 3,
            Error::Precondition(_) | Error::WidthTooLarge { .. } | Error::ChartInversion { .. } | Error::Internal(_) => 4,
            Error::NoConvergence(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
