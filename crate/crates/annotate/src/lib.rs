//! Labeling backend for human-in-the-loop active learning.
//!
//! Endpoints, all under `/api/v1`:
//! `GET queue?limit=`, `POST labels`, `GET progress`, `GET doc/{doc_id}`, `GET run`.
//! Annotators identify themselves with the `x-annotator-id` header when
//! claiming tasks; errors are `{code, rule, message}` bodies.

pub mod api;
pub mod service;
pub mod store;

use axum::http::StatusCode;
use serde::{Deserialize, Serialize};

pub use api::{router, serve};
pub use service::{
    AnnotationTask, ExternalOracle, LabelSubmission, Progress, RunInfo, RunStatus, RunView, Service, ServiceConfig,
    SubmitAck, TaskStatus,
};
pub use store::{Decision, LabeledStore, TailDecision};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub rule: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}: {}", body.code, body.message)]
pub struct ApiError {
    pub status: u16,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, rule: Option<&str>, message: String) -> Self {
        Self { status: status.as_u16(), body: ErrorBody { code: code.into(), rule: rule.map(Into::into), message } }
    }

    pub fn no_run() -> Self {
        Self::new(StatusCode::CONFLICT, "no_active_run", None, "no active-learning run is waiting for labels".into())
    }

    pub fn conflict(code: &str, message: String) -> Self {
        Self::new(StatusCode::CONFLICT, code, None, message)
    }

    pub fn not_found(code: &str, message: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, None, message)
    }

    /// A constraint violation; `rule` names the broken rule.
    pub fn invalid(rule: &str, message: String) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "constraint_violation", Some(rule), message)
    }

    pub fn bad_request(message: String) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", None, message)
    }

    pub fn storage(e: std::io::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", None, e.to_string())
    }
}
