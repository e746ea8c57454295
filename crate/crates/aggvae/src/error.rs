use std::path::PathBuf;

/// Error type shared across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    /// Invalid argument or violated invariant, with a human-readable reason.
    #[error("{0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("polygon {name:?} has no grid point; increase grid resolution")]
    Coverage { name: String },

    #[error("Cholesky factorization failed (final jitter tried: {jitter:.3e})")]
    Cholesky { jitter: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
