//! Fan-out gateway. Holds no models; every request becomes concurrent
//! outbound calls, each under its endpoint's own deadline.

use crate::config::{Endpoint, ServiceConfig, DEFAULT_PREDICTOR_TIMEOUT_MS};
use crate::http::{parse_body, with_body_limit, ApiError};
use crate::schema::{
    AnalysisResponse, ChatPayload, ChatRequest, EndpointHealth, Health, PredictPayload, PredictRequest, ServiceResult,
    ServicesResponse, Status, API_SCHEMA,
};
use crate::{Result, ServiceError};
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::State;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::future::join_all;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub struct Orchestrator {
    config: ServiceConfig,
    client: reqwest::Client,
    log: Option<Mutex<File>>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

enum CallError {
    Timeout,
    Failed(String),
}

impl Orchestrator {
    pub fn new(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| ServiceError::Client(e.to_string()))?;
        let log = match &config.request_log_path {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ServiceError::Io {
                        path: path.clone(),
                        source,
                    })?,
            )),
            None => None,
        };
        Ok(Self { config, client, log })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// POSTs `body` and decodes the reply as `T`, returning the raw JSON so
    /// the payload is forwarded unchanged. Dropping the future on timeout
    /// aborts the request.
    async fn call<B: Serialize, T: DeserializeOwned>(
        &self,
        ep: &Endpoint,
        path: &str,
        body: &B,
        budget: Duration,
    ) -> std::result::Result<Value, CallError> {
        let fut = async {
            let resp = self
                .client
                .post(ep.route(path))
                .json(body)
                .send()
                .await
                .map_err(|e| CallError::Failed(format!("request failed: {e}")))?;
            let status = resp.status();
            let bytes = resp
                .bytes()
                .await
                .map_err(|e| CallError::Failed(format!("reading response failed: {e}")))?;
            if !status.is_success() {
                let text = String::from_utf8_lossy(&bytes);
                return Err(CallError::Failed(format!("HTTP {}: {}", status.as_u16(), text.trim())));
            }
            let value: Value =
                serde_json::from_slice(&bytes).map_err(|e| CallError::Failed(format!("malformed response: {e}")))?;
            serde_json::from_value::<T>(value.clone())
                .map_err(|e| CallError::Failed(format!("unexpected response shape: {e}")))?;
            Ok(value)
        };
        match tokio::time::timeout(budget, fut).await {
            Ok(r) => r,
            Err(_) => Err(CallError::Timeout),
        }
    }

    async fn result_for<B: Serialize, T: DeserializeOwned>(&self, ep: &Endpoint, path: &str, body: &B) -> ServiceResult {
        let start = Instant::now();
        let budget = Duration::from_millis(ep.timeout_ms());
        let outcome = self.call::<B, T>(ep, path, body, budget).await;
        let latency_ms = ms(start.elapsed());
        let (status, payload, error) = match outcome {
            Ok(v) => (Status::Ok, Some(v), None),
            Err(CallError::Timeout) => (Status::Timeout, None, Some(format!("no response within {} ms", ep.timeout_ms()))),
            Err(CallError::Failed(e)) => (Status::Error, None, Some(e)),
        };
        ServiceResult {
            name: ep.name.clone(),
            status,
            latency_ms,
            payload,
            error,
        }
    }

    /// Sends `text` to every predictor at once. Never fails: unreachable,
    /// slow or broken services are reported per entry.
    pub async fn analyze(&self, text: &str) -> AnalysisResponse {
        let start = Instant::now();
        let req = PredictRequest { text: text.to_string() };
        let calls = self
            .config
            .predictors()
            .map(|ep| self.result_for::<_, PredictPayload>(ep, "/predict", &req));
        let services = join_all(calls).await;
        let resp = AnalysisResponse {
            services,
            overall_elapsed_ms: ms(start.elapsed()),
        };
        self.log_request("analyze", resp.overall_elapsed_ms, &resp.services);
        resp
    }

    /// Proxies one chat request under the generative endpoint's budget.
    pub async fn chat(&self, req: &ChatRequest) -> Option<ServiceResult> {
        let ep = self.config.generative()?;
        let res = self.result_for::<_, ChatPayload>(ep, "/chat", req).await;
        self.log_request("chat", res.latency_ms, std::slice::from_ref(&res));
        Some(res)
    }

    /// Probes `/health` on every endpoint concurrently. Probes are capped at
    /// the predictor default so a slow generative service cannot stall it.
    pub async fn services(&self) -> ServicesResponse {
        let probes = self.config.endpoints.iter().map(|ep| async move {
            let start = Instant::now();
            let budget = Duration::from_millis(ep.timeout_ms().min(DEFAULT_PREDICTOR_TIMEOUT_MS));
            let probe = async {
                let resp = self.client.get(ep.route("/health")).send().await.ok()?;
                if !resp.status().is_success() {
                    return None;
                }
                resp.json::<Health>().await.ok().filter(|h| h.status == "ok")
            };
            let (status, model) = match tokio::time::timeout(budget, probe).await {
                Ok(Some(h)) => (Status::Ok, Some(h.model)),
                Ok(None) => (Status::Error, None),
                Err(_) => (Status::Timeout, None),
            };
            EndpointHealth {
                name: ep.name.clone(),
                url: ep.url.clone(),
                kind: ep.kind,
                timeout_ms: ep.timeout_ms(),
                status,
                latency_ms: ms(start.elapsed()),
                model,
            }
        });
        ServicesResponse {
            services: join_all(probes).await,
        }
    }

    fn log_request(&self, route: &str, elapsed_ms: f64, results: &[ServiceResult]) {
        let Some(log) = &self.log else { return };
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let line = serde_json::json!({
            "timestamp_ms": ts,
            "route": route,
            "elapsed_ms": elapsed_ms,
            "services": results.iter().map(|r| serde_json::json!({
                "name": r.name,
                "status": r.status,
                "latency_ms": r.latency_ms,
            })).collect::<Vec<_>>(),
        });
        let mut f = log.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            log::warn!("request log write failed: {e}");
        }
    }
}

fn cors_layer(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE])
}

pub fn orchestrator_router(orch: Arc<Orchestrator>) -> Router {
    let cors = cors_layer(&orch.config.cors_origins);
    let router = Router::new()
        .route("/analyze", post(analyze))
        .route("/chat", post(chat))
        .route("/services", get(services))
        .route("/health", get(health))
        .route("/schema", get(schema))
        .with_state(orch);
    with_body_limit(router).layer(cors)
}

async fn analyze(
    State(orch): State<Arc<Orchestrator>>,
    body: std::result::Result<Bytes, BytesRejection>,
) -> std::result::Result<Json<AnalysisResponse>, ApiError> {
    let req: PredictRequest = parse_body(body)?;
    Ok(Json(orch.analyze(&req.text).await))
}

async fn chat(
    State(orch): State<Arc<Orchestrator>>,
    body: std::result::Result<Bytes, BytesRejection>,
) -> std::result::Result<Json<ServiceResult>, ApiError> {
    let req: ChatRequest = parse_body(body)?;
    orch.chat(&req)
        .await
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no generative endpoint configured"))
}

async fn services(State(orch): State<Arc<Orchestrator>>) -> Json<ServicesResponse> {
    Json(orch.services().await)
}

async fn health() -> Json<Health> {
    Json(Health::ok("orchestrator"))
}

async fn schema() -> Json<Value> {
    Json(serde_json::from_str(API_SCHEMA).expect("embedded schema is valid JSON"))
}
