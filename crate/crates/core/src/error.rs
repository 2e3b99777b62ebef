use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate MVA: norm {norm:e} m is at or below {eps:e} m")]
    DegenerateMva { norm: f64, eps: f64 },

    #[error("association problem too large for enumeration: K = {features} (max {max_features}), M = {measurements} (max {max_measurements})")]
    SizeLimit {
        features: usize,
        measurements: usize,
        max_features: usize,
        max_measurements: usize,
    },

    #[error("belief has zero total weight")]
    EmptyBelief,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
