use std::path::{Path, PathBuf};

use xmalign_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are unusable.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("remote summarizer: {0} (the rule-based backend is available as a fallback)")]
    Remote(String),

    #[error("{failed} of {total} runs failed; see the result CSV")]
    RunsFailed { failed: usize, total: usize, code: i32 },
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        AppError::Format {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 2 for configuration or validation problems, 3 for I/O, 4 for numeric
    /// divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Core(CoreError::Divergence { .. }) => 4,
            AppError::Core(_) => 2,
            AppError::Io { .. } | AppError::Format { .. } | AppError::Remote(_) => 3,
            AppError::RunsFailed { code, .. } => *code,
        }
    }
}
