use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use syllaform_core::planner::PlanError;
use syllaform_decode::DecodeError;
use syllaform_lm::LmError;

/// Error body: `{"error": {"kind": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "schema", message)
    }

    pub fn no_model(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "no_model", message)
    }

    pub fn internal(kind: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, kind, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::SyllableCapExceeded { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "syllable_cap", e.to_string()),
            PlanError::InvalidPlan(_) | PlanError::NothingMasked => Self::new(StatusCode::BAD_REQUEST, "plan", e.to_string()),
            _ => Self::internal("plan", e.to_string()),
        }
    }
}

impl From<DecodeError> for ApiError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Plan(p) => p.into(),
            DecodeError::InvalidParams(m) => Self::new(StatusCode::BAD_REQUEST, "params", m),
            other => Self::internal("decode", other.to_string()),
        }
    }
}

impl From<LmError> for ApiError {
    fn from(e: LmError) -> Self {
        Self::internal("model", e.to_string())
    }
}
