use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use apolo_core::adapter::RouteError;
use apolo_core::engine::EngineError;
use apolo_core::runtime::MediatorError;
use apolo_core::store::StoreError;

use crate::auth::Scope;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("missing or unknown bearer token")]
    Unauthenticated,
    #[error("token lacks the {needed} scope")]
    Scope { needed: Scope },
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Unauthenticated => StatusCode::UNAUTHORIZED,
            ApiError::Scope { .. } | ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::Unauthenticated => "unauthenticated",
            ApiError::Scope { .. } => "insufficient_scope",
            ApiError::Forbidden(_) => "forbidden",
            ApiError::NotFound(_) => "not_found",
            ApiError::Conflict(_) => "conflict",
            ApiError::Invalid(_) => "invalid",
            ApiError::Internal(_) => "internal",
        }
    }
}

fn engine_error(e: &EngineError) -> ApiError {
    let msg = e.to_string();
    match e {
        EngineError::IllegalEvent { .. }
        | EngineError::TerminalCase { .. }
        | EngineError::StaleStage { .. }
        | EngineError::SequenceMismatch { .. } => ApiError::Conflict(msg),
        EngineError::ActorMismatch { .. } | EngineError::NotModerator => ApiError::Forbidden(msg),
        EngineError::SelfTarget | EngineError::BotTarget | EngineError::BadDuration(_) | EngineError::InvalidInput(_) => {
            ApiError::Invalid(msg)
        }
    }
}

impl From<MediatorError> for ApiError {
    fn from(e: MediatorError) -> Self {
        if let Some(engine) = e.engine() {
            return engine_error(engine);
        }
        let msg = e.to_string();
        match e {
            MediatorError::Route(RouteError::Unauthorized) => ApiError::Forbidden(msg),
            MediatorError::Route(RouteError::StaleInteraction) => ApiError::Conflict(msg),
            MediatorError::Route(RouteError::UnknownCase(_)) | MediatorError::UnknownCommunity(_) => ApiError::NotFound(msg),
            MediatorError::Route(RouteError::Malformed(_)) => ApiError::Invalid(msg),
            MediatorError::Store(StoreError::VersionConflict { .. }) => ApiError::Conflict(msg),
            _ => ApiError::Internal(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}
