use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants map onto the CLI exit-code taxonomy through [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("degenerate embedding: pre-normalization vector is zero")]
    EmbeddingDegenerate,

    #[error("trace error: {0}")]
    Trace(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("mining pool has no eligible entries")]
    PoolEmpty,

    #[error("batch too small: {0} pair(s), need at least 2")]
    BatchTooSmall(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("divergence at step {step}: {message}")]
    Divergence { step: u64, message: String },

    #[error("degenerate activation map: {0}")]
    DegenerateMap(String),

    #[error("supervision error: {0}")]
    Supervision(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Divergence,
    Other,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Shape(_)
            | Error::Normalization(_)
            | Error::Format { .. }
            | Error::Manifest(_)
            | Error::EmbeddingDegenerate
            | Error::Trace(_)
            | Error::EmptyBatch(_)
            | Error::BatchTooSmall(_)
            | Error::DegenerateMap(_)
            | Error::Supervision(_) => ErrorCategory::Data,
            Error::Divergence { .. } => ErrorCategory::Divergence,
            Error::PoolEmpty | Error::Io { .. } => ErrorCategory::Other,
        }
    }

    /// Short name printed by the CLI, e.g. `ShapeError`.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::Normalization(_) => "NormalizationError",
            Error::Format { .. } => "FormatError",
            Error::Manifest(_) => "ManifestError",
            Error::EmbeddingDegenerate => "EmbeddingDegenerate",
            Error::Trace(_) => "TraceError",
            Error::EmptyBatch(_) => "EmptyBatchError",
            Error::PoolEmpty => "PoolEmptyError",
            Error::BatchTooSmall(_) => "BatchTooSmallError",
            Error::Config(_) => "ConfigError",
            Error::Divergence { .. } => "DivergenceError",
            Error::DegenerateMap(_) => "DegenerateMapError",
            Error::Supervision(_) => "SupervisionError",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
