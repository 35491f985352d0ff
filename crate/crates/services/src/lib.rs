//! HTTP layer: one predictor service per regressor bundle, a chat service
//! over the toy language model, and an orchestrator that fans requests out
//! to them with independent per-endpoint deadlines.

pub mod config;
pub mod generative;
mod http;
pub mod orchestrator;
pub mod predictor;
pub mod schema;
pub mod stub;

pub use config::{Endpoint, EndpointKind, ServiceConfig, DEFAULT_GENERATIVE_TIMEOUT_MS, DEFAULT_PREDICTOR_TIMEOUT_MS};
pub use http::{serve, spawn, MAX_BODY_BYTES};
pub use generative::{generative_router, lm_router, ChatModel, LmChat, MAX_REPLY_TOKENS};
pub use orchestrator::{orchestrator_router, Orchestrator};
pub use predictor::{predictor_router, Predictor};
pub use stub::{stub_generative_router, stub_predictor_router, Stub, StubMode};
pub use schema::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] psykit_core::models::ModelError),
    #[error(transparent)]
    Persona(#[from] psykit_core::persona::PersonaError),
    #[error("http client: {0}")]
    Client(String),
}

pub type Result<T> = std::result::Result<T, ServiceError>;
