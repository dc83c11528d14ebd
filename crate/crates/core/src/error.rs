use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the kpf library.
#[derive(Debug, Error)]
pub enum KpfError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular {what} matrix: {hint}")]
    Singular { what: String, hint: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("antipodal points on the sphere: geodesic is undefined")]
    Antipodal,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported archive version `{found}` (expected `{expected}`)")]
    UnsupportedVersion { found: String, expected: String },

    #[error("corrupt model archive: {0}")]
    Archive(String),

    #[error("generation failed after {attempts} attempts for sample {index}: {source}")]
    GenerationFailed {
        index: usize,
        attempts: usize,
        #[source]
        source: Box<KpfError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl KpfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KpfError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KpfError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than runtime failure.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            KpfError::DimensionMismatch { .. } | KpfError::InvalidArgument(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, KpfError>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(KpfError::DimensionMismatch { expected, actual });
    }
    Ok(())
}
