use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in layer {layer} during {stage}")]
    NonFinite { stage: &'static str, layer: usize },

    #[error("svd did not converge within {cap} sweeps")]
    SvdNoConvergence { cap: usize },

    #[error("zero-norm input to {0}")]
    ZeroNorm(&'static str),

    #[error("method {0} requires oracle gradients but none were supplied")]
    OracleRequired(String),

    #[error("malformed {format} file {path}: {reason} (offset {offset})")]
    Format {
        format: &'static str,
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
