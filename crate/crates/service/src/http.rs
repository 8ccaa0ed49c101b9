use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use uuid::Uuid;

use crate::session::{CreateSession, SessionError, SessionStore, SubmitAction};

/// JSON error body: `{"error": {"category": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    category: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            category: "invalid-input",
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> ApiError {
        let (status, category) = match &e {
            SessionError::NotInitialized => (StatusCode::SERVICE_UNAVAILABLE, "not-initialized"),
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            SessionError::InvalidAction { .. } | SessionError::InvalidConfig(_) => {
                (StatusCode::BAD_REQUEST, "invalid-input")
            }
            SessionError::Terminated(_) => (StatusCode::CONFLICT, "terminated"),
            SessionError::StaleStep { .. } => (StatusCode::CONFLICT, "stale-step"),
            SessionError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            category,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> ApiError {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"category": self.category, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<SessionStore>;

fn parse_id(id: &str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(id).map_err(|_| ApiError {
        status: StatusCode::NOT_FOUND,
        category: "not-found",
        message: format!("no session {id}"),
    })
}

async fn list_actions(State(store): State<Shared>) -> Result<Response, ApiError> {
    Ok(Json(store.catalog()?).into_response())
}

async fn create_session(State(store): State<Shared>, body: Option<Json<CreateSession>>) -> Result<Response, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let created = store.create(req)?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn submit_action(
    State(store): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<SubmitAction>, JsonRejection>,
) -> Result<Response, ApiError> {
    let id = parse_id(&id)?;
    let Json(req) = body?;
    let store = store.clone();
    let result = tokio::task::spawn_blocking(move || store.submit(id, req))
        .await
        .map_err(|e| ApiError::from(SessionError::Internal(e.to_string())))??;
    Ok(Json(result).into_response())
}

async fn get_session(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(store.snapshot(parse_id(&id)?)?).into_response())
}

/// The transcript as a one-touch transcripts file.
async fn get_transcript(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let transcript = store.transcript(parse_id(&id)?)?;
    let text = piste_core::io::transcripts_to_string(&[transcript])
        .map_err(|e| ApiError::from(SessionError::Internal(e.to_string())))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/actions", get(list_actions))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/actions", post(submit_action))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .with_state(store)
}
