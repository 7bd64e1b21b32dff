use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Core(#[from] gbpc_core::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit code: 2 infeasible, 3 bad config or input files,
    /// 4 failed verification, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use gbpc_core::Error as E;
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } => 3,
            HarnessError::Core(E::Infeasible) => 2,
            HarnessError::Core(E::Parse { .. } | E::Io(_) | E::Shape(_) | E::TooShort { .. }) => 3,
            HarnessError::Core(_) => 1,
            HarnessError::Verification(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
