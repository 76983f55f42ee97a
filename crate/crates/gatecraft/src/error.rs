use std::io;

use gatecraft_core::Error as CoreError;

/// Everything the harness can fail with, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io: {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        HarnessError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// 1 usage/config, 2 training divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(CoreError::Diverged { .. }) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Csv(e) if e.is_io_error() => 3,
            _ => 1,
        }
    }
}
