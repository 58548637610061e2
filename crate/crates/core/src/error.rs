use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library. The CLI maps them onto exit codes
/// via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("ragged predictor rows: row {row} has {found} predictors, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: outcome {value} is not 0 or 1 in binary mode")]
    NonBinaryOutcome { row: usize, value: f64 },

    #[error("row {row}: time index {t} must be >= 1")]
    TimeIndex { row: usize, t: i64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("t_train = {t_train} outside 1..{max}")]
    SplitOutOfRange { t_train: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("series error: {0}")]
    Series(String),

    #[error("diagnostics need at least {needed} draws per chain, got {found}")]
    TooFewDraws { needed: usize, found: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("chain {chain} failed at sweep {sweep}: {source}")]
    Chain {
        chain: usize,
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("forecast: {0}")]
    Forecast(String),

    #[error("integrity check failed for {path}: {detail}")]
    Integrity { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) => true,
            Error::Chain { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// 2 for input/validation problems, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
