use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("schema mismatch: column {column:?} {problem}")]
    SchemaMismatch { column: String, problem: String },

    #[error("{path}: row {row}, column {column:?}: {problem}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        problem: String,
    },

    #[error("ragged row {row} in {path}: expected {expected} fields, found {found}")]
    RaggedRow {
        path: String,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("column {0:?} has no observed values")]
    NoObservedValues(String),

    #[error("target {0:?} has a single class")]
    SingleClass(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("model schema fingerprint {expected} does not match table fingerprint {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("objective returned a non-finite score for candidate {0}")]
    NonFiniteObjective(String),

    #[error("undefined odds: {0}")]
    UndefinedOdds(String),

    #[error("bootstrap unstable: {degenerate} of {total} replicates were degenerate")]
    DegenerateBootstrap { degenerate: usize, total: usize },

    #[error("no treated subject could be matched")]
    NoMatches,

    #[error("correlation matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} failed (seed {seed}): {source}")]
    Stage {
        stage: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
