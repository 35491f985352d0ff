//! Canned services with a fixed delay, for exercising the orchestrator.

use crate::http::{parse_body, with_body_limit, ApiError};
use crate::schema::{ChatPayload, ChatRequest, Health, PredictPayload, PredictRequest};
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    Ok,
    /// Replies with this HTTP status and an error envelope.
    Fail(u16),
    /// Replies 200 with a body that is not the expected payload.
    Malformed,
}

#[derive(Debug, Clone)]
pub struct Stub {
    pub name: String,
    pub delay: Duration,
    pub mode: StubMode,
}

impl Stub {
    pub fn new(name: impl Into<String>, delay_ms: u64) -> Self {
        Self {
            name: name.into(),
            delay: Duration::from_millis(delay_ms),
            mode: StubMode::Ok,
        }
    }

    pub fn with_mode(mut self, mode: StubMode) -> Self {
        self.mode = mode;
        self
    }

    async fn reply<T: serde::Serialize>(&self, ok: T) -> Response {
        tokio::time::sleep(self.delay).await;
        match self.mode {
            StubMode::Ok => Json(ok).into_response(),
            StubMode::Fail(code) => {
                let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
                ApiError::new(status, format!("{} is failing on purpose", self.name)).into_response()
            }
            StubMode::Malformed => (StatusCode::OK, "{\"unexpected\":true}").into_response(),
        }
    }
}

/// Scores are a deterministic function of the text length.
pub fn stub_predictor_router(stub: Stub) -> Router {
    let router = Router::new()
        .route("/predict", post(stub_predict))
        .route("/health", get(stub_health))
        .with_state(Arc::new(stub));
    with_body_limit(router)
}

/// Echoes the message back.
pub fn stub_generative_router(stub: Stub) -> Router {
    let router = Router::new()
        .route("/chat", post(stub_chat))
        .route("/health", get(stub_health))
        .with_state(Arc::new(stub));
    with_body_limit(router)
}

async fn stub_health(State(stub): State<Arc<Stub>>) -> Json<Health> {
    Json(Health::ok(stub.name.clone()))
}

async fn stub_predict(State(stub): State<Arc<Stub>>, body: Result<Bytes, BytesRejection>) -> Response {
    let req: PredictRequest = match parse_body(body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let n = req.text.chars().count() as f64;
    let payload = PredictPayload {
        model: stub.name.clone(),
        scores: [("length".to_string(), n), ("score".to_string(), 0.5)].into_iter().collect(),
    };
    stub.reply(payload).await
}

async fn stub_chat(State(stub): State<Arc<Stub>>, body: Result<Bytes, BytesRejection>) -> Response {
    let req: ChatRequest = match parse_body(body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let words: Vec<&str> = req.message.split_whitespace().collect();
    let n = req.max_tokens.unwrap_or(words.len()).min(words.len());
    let payload = ChatPayload {
        reply: words[..n].join(" "),
        tokens: n,
    };
    stub.reply(payload).await
}
