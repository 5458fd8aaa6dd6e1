use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mirror_core::datasource::{DataSourceError, ExecutionError};
use mirror_core::llm_provider::ProviderError;
use mirror_core::prompting::TemplateError;
use mirror_core::sql_guard::ValidationVerdict;
use serde_json::{json, Value};

/// An error response: `{"error": <message>, "reason": <code>}` plus any
/// extra fields.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub reason: String,
    pub message: String,
    pub extra: Option<(&'static str, Value)>,
}

impl ApiError {
    pub fn new(status: StatusCode, reason: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            reason: reason.into(),
            message: message.into(),
            extra: None,
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("unknown {what} `{id}`"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn rejected(verdict: ValidationVerdict) -> Self {
        let mut err = Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            verdict.reason.as_str(),
            format!("SQL rejected: {}", verdict.reason.as_str()),
        );
        err.extra = Some(("verdict", serde_json::to_value(&verdict).unwrap_or(Value::Null)));
        err
    }

    pub fn execution(e: ExecutionError) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.kind.as_str(), e.message)
    }

    pub fn provider(e: ProviderError) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, e.kind.as_str(), e.message)
    }
}

impl From<DataSourceError> for ApiError {
    fn from(e: DataSourceError) -> Self {
        let status = match e {
            DataSourceError::UnknownId(_) => StatusCode::NOT_FOUND,
            DataSourceError::Engine(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.reason(), e.to_string())
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.reason(), e.to_string())
    }
}

impl From<crate::store::StoreError> for ApiError {
    fn from(e: crate::store::StoreError) -> Self {
        Self::internal(e.to_string())
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self::internal(format!("worker failed: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message, "reason": self.reason });
        if let Some((key, value)) = self.extra {
            body[key] = value;
        }
        (self.status, Json(body)).into_response()
    }
}
