use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("no sample {0} in this session")]
    UnknownSample(usize),
    #[error("{message}")]
    Conflict { code: &'static str, message: String },
    #[error("the unlabeled pool is exhausted")]
    PoolExhausted,
    #[error("{0}")]
    BadRequest(String),
    #[error("{message}")]
    Invalid { code: &'static str, message: String },
    #[error(transparent)]
    Core(#[from] emoc_core::Error),
    #[error(transparent)]
    Harness(#[from] emoc_harness::HarnessError),
    #[error("session log {path}: {source}")]
    Log {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("replay of session {session} diverged: {message}")]
    Replay { session: String, message: String },
    #[error("background task failed: {0}")]
    Task(String),
}

impl ServiceError {
    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        ServiceError::Invalid { code, message: message.into() }
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        ServiceError::Conflict { code, message: message.into() }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownSample(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::PoolExhausted => StatusCode::GONE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Invalid { .. } | ServiceError::Core(_) | ServiceError::Harness(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Log { .. } | ServiceError::Replay { .. } | ServiceError::Task(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownSample(_) => "unknown_sample",
            ServiceError::Conflict { code, .. } | ServiceError::Invalid { code, .. } => code,
            ServiceError::PoolExhausted => "pool_exhausted",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Core(_) | ServiceError::Harness(_) => "invalid_config",
            ServiceError::Log { .. } => "storage_error",
            ServiceError::Replay { .. } => "replay_diverged",
            ServiceError::Task(_) => "internal_error",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}
