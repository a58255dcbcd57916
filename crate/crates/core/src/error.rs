use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Model,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },

    #[error("line {line}, column {column}: value {value} outside [-100, 100]")]
    OutOfRange {
        line: usize,
        column: String,
        value: i64,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing value in column `{column}` (row {row})")]
    MissingValue { column: String, row: String },

    #[error("all importances are zero for target `{0}`")]
    ZeroImportance(String),

    #[error("segment {segment} has {size} rows, below the minimum of {minimum}")]
    SegmentTooSmall {
        segment: String,
        size: usize,
        minimum: usize,
    },

    #[error("importance table invalid: {0}")]
    TableInvariant(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps `self` with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Stage { source, .. } => source.kind(),
            Error::Schema(_) | Error::Config(_) => ErrorKind::Config,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::OutOfRange { .. }
            | Error::MissingColumn(_)
            | Error::UnknownColumn(_)
            | Error::MissingValue { .. }
            | Error::TableInvariant(_) => ErrorKind::Data,
            Error::InvalidInput(_)
            | Error::ZeroImportance(_)
            | Error::SegmentTooSmall { .. }
            | Error::Layout(_) => ErrorKind::Model,
        }
    }
}
