use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solvers and the problem loaders.
#[derive(Debug, Error)]
pub enum Error {
    /// An input failed validation. `field` names the offending field path.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// KL-type quantity with an unsupported zero in the reference distribution.
    #[error("divergence undefined: reference has zero mass at index {index} where the source has mass {mass:e}")]
    DivergenceUndefined { index: usize, mass: f64 },

    #[error("degenerate encoder row for x = {row}")]
    DegenerateRow { row: usize },

    #[error("cluster {cluster} is degenerate (marginal {marginal:e}), skipped")]
    SkippedCluster { cluster: usize, marginal: f64 },

    #[error("exponential-family model does not reproduce the rule: max residual {max_residual:e}")]
    ExactFit { max_residual: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

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

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io_at(path: &std::path::Path) -> impl Fn(std::io::Error) -> Self + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv_at(path: &std::path::Path) -> impl Fn(csv::Error) -> Self + '_ {
        move |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn json_at(path: &std::path::Path) -> impl Fn(serde_json::Error) -> Self + '_ {
        move |source| Error::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than internal failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::DimensionMismatch { .. }
                | Error::ExactFit { .. }
                | Error::Json { .. }
                | Error::Csv { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
