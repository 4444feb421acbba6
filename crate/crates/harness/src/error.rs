use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("run diverged at epoch {epoch}, step {step}: {reason}")]
    Divergence { epoch: u64, step: u64, reason: String },

    #[error(transparent)]
    Core(#[from] gradguess::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Divergence { .. } => 3,
            HarnessError::Core(gradguess::Error::NonFinite { .. }) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
