use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] twolmm::Error),
    #[error("{failed} of {total} method runs failed")]
    MethodsFailed { failed: usize, total: usize },
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    /// Process exit status: 1 config, 2 solver, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            BenchError::Io { .. } => 3,
            BenchError::Core(twolmm::Error::Io(_) | twolmm::Error::Parse { .. }) => 3,
            BenchError::Core(_) | BenchError::MethodsFailed { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
