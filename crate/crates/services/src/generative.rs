//! Persona-conditioned chat over the toy language model.

use crate::http::{parse_body, with_body_limit, ApiError};
use crate::schema::{ChatPayload, ChatRequest, Health};
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use psykit_core::persona::{GenerateConfig, PersonaProfile, TinyLm};
use std::sync::Arc;

/// Upper bound on `max_tokens` accepted per request.
pub const MAX_REPLY_TOKENS: usize = 512;

pub trait ChatModel: Send + Sync + 'static {
    fn name(&self) -> &str;
    /// Returns the reply and the number of generated tokens.
    fn chat(&self, profile: &PersonaProfile, message: &str, cfg: &GenerateConfig) -> Result<(String, usize), String>;
}

pub struct LmChat {
    pub name: String,
    pub model: TinyLm,
    /// Temperature and top-k used for every request; seed and length come
    /// from the request.
    pub defaults: GenerateConfig,
}

impl ChatModel for LmChat {
    fn name(&self) -> &str {
        &self.name
    }

    fn chat(&self, profile: &PersonaProfile, message: &str, cfg: &GenerateConfig) -> Result<(String, usize), String> {
        let ids = self.model.generate_ids(profile, message, cfg).map_err(|e| e.to_string())?;
        Ok((self.model.vocab().detokenize(&ids), ids.len()))
    }
}

struct GenState {
    model: Arc<dyn ChatModel>,
    defaults: GenerateConfig,
}

pub fn generative_router(model: Arc<dyn ChatModel>, defaults: GenerateConfig) -> Router {
    let router = Router::new()
        .route("/chat", post(chat))
        .route("/health", get(health))
        .with_state(Arc::new(GenState { model, defaults }));
    with_body_limit(router)
}

pub fn lm_router(chat: LmChat) -> Router {
    let defaults = chat.defaults.clone();
    generative_router(Arc::new(chat), defaults)
}

async fn health(State(st): State<Arc<GenState>>) -> Json<Health> {
    Json(Health::ok(st.model.name()))
}

async fn chat(State(st): State<Arc<GenState>>, body: Result<Bytes, BytesRejection>) -> Result<Json<ChatPayload>, ApiError> {
    let req: ChatRequest = parse_body(body)?;
    let max_tokens = req.max_tokens.unwrap_or(st.defaults.max_tokens);
    if max_tokens > MAX_REPLY_TOKENS {
        return Err(ApiError::bad_request(format!("max_tokens must be at most {MAX_REPLY_TOKENS}")));
    }
    let cfg = GenerateConfig {
        max_tokens,
        seed: req.seed.unwrap_or_else(rand::random),
        ..st.defaults.clone()
    };
    let st2 = st.clone();
    let (reply, tokens) = tokio::task::spawn_blocking(move || st2.model.chat(&req.profile, &req.message, &cfg))
        .await
        .map_err(|e| ApiError::internal(format!("generation task failed: {e}")))?
        .map_err(|e| ApiError::internal(format!("generation failed: {e}")))?;
    Ok(Json(ChatPayload { reply, tokens }))
}
