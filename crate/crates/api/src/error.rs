use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dtm_core::engine::{EngineError, ErrorClass};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    BadRequest(String),
    #[error("no route for {0}")]
    NotFound(String),
    #[error("missing or wrong token")]
    Unauthorized,
    #[error("engine stopped")]
    EngineGone,
    #[error("server failed: {0}")]
    Server(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Engine(e) => match e.class() {
                ErrorClass::NotFound => StatusCode::NOT_FOUND,
                ErrorClass::Conflict => StatusCode::CONFLICT,
                ErrorClass::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
            },
            ApiError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::EngineGone => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Bind { .. } | ApiError::Io(_) | ApiError::Server(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match &self {
            ApiError::Engine(e) => {
                let mut v = serde_json::to_value(e).unwrap_or_else(|_| json!({}));
                v["message"] = json!(e.to_string());
                v["class"] = json!(e.class());
                v
            }
            other => json!({"error": "request", "message": other.to_string()}),
        };
        (self.status(), Json(body)).into_response()
    }
}
