use thiserror::Error;

use crate::grid::{BranchId, BusId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("branch {branch}: {reason}")]
    Structural { branch: BranchId, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid is not balanced: sum of injections is {sum:e}")]
    Unbalanced { sum: f64 },

    #[error("grid is disconnected into {} components", components.len())]
    Disconnected { components: Vec<Vec<BusId>> },

    #[error("grounded Laplacian is not positive definite")]
    Singular,

    /// The modification splits the grid; `criterion` is the scalar (or
    /// smallest pivot) that vanished.
    #[error("{context} islands the grid (criterion {criterion:e})")]
    Islanding { context: String, criterion: f64 },

    #[error("switch {switch} is degenerate: nu^T B^-1 nu = {value:e}")]
    DegenerateSwitch { switch: BranchId, value: f64 },

    #[error("closing switches {switches:?} is redundant: endpoints already merged")]
    RedundantClosing { switches: Vec<BranchId> },

    #[error("unknown bus {0}")]
    UnknownBus(BusId),

    #[error("unknown branch {0}")]
    UnknownBranch(BranchId),

    #[error("invalid split of bus {parent}: {reason}")]
    InvalidSplit { parent: BusId, reason: String },

    #[error("invalid modification: {0}")]
    InvalidModification(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("conversion: {0}")]
    Conversion(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn islanding(context: impl Into<String>, criterion: f64) -> Self {
        Error::Islanding {
            context: context.into(),
            criterion,
        }
    }

    pub fn is_islanding(&self) -> bool {
        matches!(
            self,
            Error::Islanding { .. } | Error::Disconnected { .. } | Error::Singular
        )
    }
}
