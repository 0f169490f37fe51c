use thiserror::Error;

use crate::groups::GroupId;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group mismatch: {left:?} vs {right:?}")]
    GroupMismatch { left: GroupId, right: GroupId },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("tangent vector is not based at the requested point")]
    BaseMismatch,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("curve is not horizontal: defect {defect:.3e} exceeds {limit:.3e}")]
    NotHorizontal { defect: f64, limit: f64 },

    #[error("curve does not lie on the network: {0}")]
    CurveNotOnNetwork(String),

    #[error("empty shell: {0}")]
    EmptyShell(String),

    #[error("Monte-Carlo budget exhausted: stderr {stderr:.3e} above target {target:.3e}")]
    BudgetExhausted { stderr: f64, target: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
