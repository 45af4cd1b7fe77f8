use std::path::PathBuf;

use thiserror::Error;

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Engine(#[from] livemusic::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A client request that was refused; the session carries on.
    #[error("{reason}")]
    Rejected { code: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    pub fn invalid(reason: impl Into<String>) -> Self {
        ServiceError::Rejected {
            code: "invalid_value",
            reason: reason.into(),
        }
    }

    pub fn rejected(code: &'static str, reason: impl Into<String>) -> Self {
        ServiceError::Rejected {
            code,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable code for error frames.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Rejected { code, .. } => code,
            ServiceError::Engine(_) => "invalid_value",
            ServiceError::Config(_) => "invalid_config",
            ServiceError::Io { .. } => "io",
            ServiceError::Json(_) => "bad_json",
        }
    }
}
