use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("concept direction has zero norm")]
    ZeroNorm,

    #[error("unsupported concept kind `{0}`")]
    UnknownConceptKind(String),

    #[error("invalid concept `{id}`: {reason}")]
    InvalidConcept { id: String, reason: String },

    #[error("training did not converge after {iterations} iterations (accuracy {accuracy:.4})")]
    TrainingDidNotConverge { iterations: usize, accuracy: f64 },

    #[error("numeric ablation did not converge: constraint violation {violation:e} after {iterations} iterations")]
    SolverDidNotConverge { iterations: usize, violation: f64 },

    #[error("unsupported measure combination: {0}")]
    UnsupportedCombination(String),

    #[error("unknown measure `{name}`; valid measures: {valid}")]
    UnknownMeasure { name: String, valid: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no batch carried positive activation weight")]
    AllBatchesSkipped,

    #[error("score table incomplete; missing cells: {}", .0.join(", "))]
    Incomplete(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { expected, actual }
    }
}
