use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] polyforget_core::Error),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("missing artifact: {0}")]
    Missing(PathBuf),

    #[error("invalid data in {path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{} of {total} runs did not complete: {}", failed.len(), failed.join("; "))]
    Partial { total: usize, failed: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return HarnessError::Missing(path);
        }
        HarnessError::Io { path, source }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        HarnessError::Data {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit status. Usage errors (2) are reported by the argument
    /// parser before any of these arise.
    pub fn exit_code(&self) -> i32 {
        use polyforget_core::Error as E;
        match self {
            HarnessError::Config { .. } | HarnessError::Core(E::InvalidConfig(_)) => 3,
            HarnessError::Missing(_) => 4,
            HarnessError::Core(E::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 4,
            HarnessError::Data { .. }
            | HarnessError::Core(E::Line { .. } | E::Annotation { .. } | E::InvalidInput(_) | E::Json(_)) => 5,
            HarnessError::Partial { .. } => 6,
            _ => 1,
        }
    }
}
