use std::io;
use std::path::PathBuf;

/// Errors raised by the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index out of range: {what} = {index}, valid range 0..{len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("channel {channel} is constant and cannot be standardized")]
    ConstantChannel { channel: usize },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("row {row}: found {found} fields, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },

    #[error("row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("spectral matrix is not positive definite at frequency {freq}")]
    NotPositiveDefinite { freq: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no samples retained: {0}")]
    EmptyRetention(String),

    #[error("frequency grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed trace {path}: {message}")]
    Trace { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by the numbers themselves rather than by the
    /// input files or the configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite { .. } | Error::NonFinite(_))
    }

    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::ConstantChannel { .. }
                | Error::InvalidSeries(_)
                | Error::RaggedRow { .. }
                | Error::Parse { .. }
                | Error::Trace { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Dimension(_)
                | Error::EmptyRetention(_)
                | Error::GridMismatch(_)
        )
    }
}
