//! Local HTTP scoring service over one loaded [`Scorer`].
//!
//! `POST /v1/score` takes `{"title": ..., "text": ...}` and answers with a
//! [`ScoreResponse`]. `GET /healthz` reports the model version.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use stancecred::scoring::{ScoreError, ScoreRequest, ScoreResponse, Scorer, MAX_REQUEST_BYTES};

/// Bodies above this are refused before parsing. JSON escaping can double
/// the size of valid text, so this sits above the 1 MiB field limit.
pub const BODY_LIMIT_BYTES: usize = 2 * MAX_REQUEST_BYTES + 4096;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        let status = match e {
            ScoreError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

/// Malformed JSON is a 400; well-formed JSON of the wrong shape is a 422.
fn parse_request(body: &[u8]) -> Result<ScoreRequest, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        use serde_json::error::Category;
        let status = match e.classify() {
            Category::Data => StatusCode::UNPROCESSABLE_ENTITY,
            Category::Syntax | Category::Eof | Category::Io => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    })
}

async fn score(State(scorer): State<Arc<Scorer>>, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let req = parse_request(&body)?;
    let resp = tokio::task::spawn_blocking(move || scorer.score(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}

async fn healthz(State(scorer): State<Arc<Scorer>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model_version": scorer.model_version() }))
}

pub fn router(scorer: Arc<Scorer>) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(BODY_LIMIT_BYTES))
        .with_state(scorer)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(scorer: Arc<Scorer>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "serving {} on http://{}",
        scorer.model_version(),
        listener.local_addr()?
    );
    axum::serve(listener, router(scorer)).await
}
