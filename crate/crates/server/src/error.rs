use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use scenefix_core::Error as CoreError;

/// Errors returned by the job API as `{"error": code, "message": text}`.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

pub type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ApiError {
    pub fn code(&self) -> (StatusCode, &'static str) {
        use CoreError::*;
        match self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            ApiError::Core(e) => match e {
                JobNotFound(_) => (StatusCode::NOT_FOUND, "job_not_found"),
                SubtaskNotFound(_) => (StatusCode::NOT_FOUND, "subtask_not_found"),
                MissingArtifact(_) => (StatusCode::NOT_FOUND, "missing_artifact"),
                NoPendingCandidate(_) => (StatusCode::CONFLICT, "no_pending_candidate"),
                IterationBudgetExhausted(_) => (StatusCode::CONFLICT, "iteration_budget_exhausted"),
                InvalidState(_) => (StatusCode::CONFLICT, "invalid_state"),
                UnsupportedAction(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unsupported_action"),
                InvalidImage(_) => (StatusCode::BAD_REQUEST, "invalid_image"),
                EmptyDescription => (StatusCode::BAD_REQUEST, "empty_description"),
                InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
                ValidationFailed(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation_failed"),
                Backend(_) => (StatusCode::BAD_GATEWAY, "backend"),
                _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.code();
        let body = ErrorBody {
            error: code.into(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
