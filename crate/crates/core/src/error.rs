use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// A numerical procedure failed to produce a usable answer.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Iterative fit hit its iteration cap; carries the best parameters seen.
    #[error("fit did not converge after {iterations} iterations (best rms {best_rms:.3e})")]
    NotConverged {
        iterations: usize,
        best_params: Vec<f64>,
        best_rms: f64,
    },

    #[error("malformed PFM {path}: {reason}")]
    Pfm { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the numbers rather than the data layout.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::NotConverged { .. } | Error::Degenerate(_)
        )
    }
}
