//! Request and response bodies shared by every service, and the published
//! JSON Schema they conform to.

use psykit_core::persona::PersonaProfile;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

/// JSON Schema (draft 2020-12) with one `$defs` entry per body type.
pub const API_SCHEMA: &str = include_str!("../schema/api.schema.json");

/// A standalone schema validating the `$defs` entry `name`.
pub fn schema_for(name: &str) -> Value {
    let mut root: Value = serde_json::from_str(API_SCHEMA).expect("embedded schema is valid JSON");
    root["$ref"] = Value::String(format!("#/$defs/{name}"));
    root
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictPayload {
    pub model: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
}

impl Health {
    pub fn ok(model: impl Into<String>) -> Self {
        Self {
            status: "ok".into(),
            model: model.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub profile: PersonaProfile,
    pub message: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatPayload {
    pub reply: String,
    pub tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Timeout,
    Error,
}

/// Outcome of one outbound call. `payload` is present exactly when the
/// status is `ok`, and is passed through as the service returned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceResult {
    pub name: String,
    pub status: Status,
    pub latency_ms: f64,
    pub payload: Option<Value>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResponse {
    pub services: Vec<ServiceResult>,
    pub overall_elapsed_ms: f64,
}

impl AnalysisResponse {
    pub fn get(&self, name: &str) -> Option<&ServiceResult> {
        self.services.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointHealth {
    pub name: String,
    pub url: String,
    pub kind: crate::EndpointKind,
    pub timeout_ms: u64,
    pub status: Status,
    pub latency_ms: f64,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServicesResponse {
    pub services: Vec<EndpointHealth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: u16,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}
