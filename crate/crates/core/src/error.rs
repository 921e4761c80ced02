use std::path::PathBuf;

use thiserror::Error;

use crate::universe::ClassId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown class id {0}")]
    UnknownClass(ClassId),

    #[error("need {needed} distinct classes but only {available} are available")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("attribute pair ({0}, {1}) is infeasible: {2}")]
    InfeasiblePair(u32, u32, String),

    #[error("fixed support table has no entry for class {0}")]
    MissingFixedSupport(ClassId),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("rank correlation is undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("appearance probabilities sum to {sum}, expected n = {n}")]
    ProbabilitySum { sum: f64, n: usize },

    #[error("appearance probability p[{index}] = {value} outside [{floor}, 1]")]
    ProbabilityFloor { index: usize, value: f64, floor: f64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("snapshot at epoch {epoch} has no estimate for distribution '{distribution}'")]
    MissingEstimate { distribution: String, epoch: usize },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        partial: Box<crate::learners::SnapshotTrajectory>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
