//! HTTP error bodies: `{code, message}` with the domain code verbatim.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use panvas_core::PlatformError;
use serde::{Deserialize, Serialize};

use crate::store::StoreError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }

    pub fn unauthorized() -> Self {
        Self::new("UNAUTHORIZED", "missing or invalid bearer token")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new("FORBIDDEN", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("VALIDATION_ERROR", message)
    }

    pub fn status(&self) -> StatusCode {
        status_for(&self.code)
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UNAUTHORIZED" => StatusCode::UNAUTHORIZED,
        "INTERNAL" => StatusCode::INTERNAL_SERVER_ERROR,
        "STORAGE_FAILURE" | "CORRUPT_LOG" => StatusCode::SERVICE_UNAVAILABLE,
        "NOT_FOUND" => StatusCode::NOT_FOUND,
        "FORBIDDEN" | "NOT_AUTHOR" | "NOT_POSTER" | "NOT_ASSIGNEE" | "NOT_MODERATOR" | "AUTHOR_CANNOT_BET"
        | "SELF_RATING" | "SELF_META_REVIEW" | "CONFLICT_OF_INTEREST" | "UNLICENSED" => StatusCode::FORBIDDEN,
        "INSUFFICIENT_FUNDS" => StatusCode::PAYMENT_REQUIRED,
        c if c.starts_with("UNKNOWN_") && c != "UNKNOWN_EMOJI" && c != "UNKNOWN_EVENT_KIND" => StatusCode::NOT_FOUND,
        c if c.starts_with("DUPLICATE")
            || c.starts_with("ALREADY_")
            || c.ends_with("_CLOSED")
            || c.ends_with("_SETTLED")
            || c == "IDEMPOTENCY_CONFLICT"
            || c == "NOT_CLOSED"
            || c == "CYCLE_DETECTED"
            || c == "LICENSE_EXISTS"
            || c == "PAPER_FROZEN"
            || c == "INVALID_TRANSITION"
            || c == "EPOCH_NOT_CURRENT"
            || c == "PARENT_HIDDEN" =>
        {
            StatusCode::CONFLICT
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_map_to_statuses() {
        assert_eq!(status_for("UNKNOWN_PAPER"), StatusCode::NOT_FOUND);
        assert_eq!(status_for("UNKNOWN_EMOJI"), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(status_for("DUPLICATE_MARKET"), StatusCode::CONFLICT);
        assert_eq!(status_for("MARKET_CLOSED"), StatusCode::CONFLICT);
        assert_eq!(status_for("UNLICENSED"), StatusCode::FORBIDDEN);
        assert_eq!(status_for("INSUFFICIENT_FUNDS"), StatusCode::PAYMENT_REQUIRED);
        assert_eq!(status_for("TEXT_TOO_SHORT"), StatusCode::UNPROCESSABLE_ENTITY);
    }
}
