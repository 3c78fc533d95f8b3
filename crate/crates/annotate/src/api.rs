use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::service::{LabelSubmission, Service};
use crate::ApiError;

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";
const DEFAULT_LIMIT: usize = 10;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body)).into_response()
    }
}

type Shared = Arc<Service>;

#[derive(Deserialize)]
struct QueueParams {
    limit: Option<usize>,
}

fn annotator(headers: &HeaderMap) -> Option<String> {
    headers.get(ANNOTATOR_HEADER).and_then(|v| v.to_str().ok()).map(str::trim).filter(|s| !s.is_empty()).map(String::from)
}

async fn queue(State(s): State<Shared>, headers: HeaderMap, Query(q): Query<QueueParams>) -> Result<Response, ApiError> {
    let tasks = s.queue(q.limit.unwrap_or(DEFAULT_LIMIT), annotator(&headers).as_deref())?;
    Ok(Json(serde_json::json!({ "tasks": tasks })).into_response())
}

async fn labels(
    State(s): State<Shared>,
    headers: HeaderMap,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(mut sub) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if sub.annotator.is_empty() {
        sub.annotator = annotator(&headers).unwrap_or_default();
    }
    // The store lock can be held across a disk sync; keep it off the async workers.
    let ack = tokio::task::spawn_blocking(move || s.submit(sub))
        .await
        .map_err(|e| ApiError::storage(std::io::Error::other(e)))??;
    Ok(Json(ack).into_response())
}

async fn progress(State(s): State<Shared>) -> Response {
    Json(s.progress()).into_response()
}

async fn doc(State(s): State<Shared>, Path(doc_id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.document(&doc_id)?).into_response())
}

async fn run(State(s): State<Shared>) -> Response {
    Json(s.run_view()).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/v1/queue", get(queue))
        .route("/api/v1/labels", post(labels))
        .route("/api/v1/progress", get(progress))
        .route("/api/v1/doc/{doc_id}", get(doc))
        .route("/api/v1/run", get(run))
        .with_state(service)
}

/// Bind and serve until the future returned by `shutdown` resolves.
/// Returns the bound address through `on_bind` before serving starts.
pub async fn serve(
    service: Arc<Service>,
    addr: SocketAddr,
    on_bind: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bind(listener.local_addr()?);
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}
