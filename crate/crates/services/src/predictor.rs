//! One regressor bundle behind `POST /predict`.

use crate::http::{parse_body, with_body_limit, ApiError};
use crate::schema::{Health, PredictPayload, PredictRequest};
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use psykit_core::models::RegressorBundle;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Anything that maps text to named scores.
pub trait Predictor: Send + Sync + 'static {
    fn name(&self) -> &str;
    fn predict(&self, text: &str) -> Result<BTreeMap<String, f64>, String>;
}

impl Predictor for RegressorBundle {
    fn name(&self) -> &str {
        &self.manifest.name
    }

    fn predict(&self, text: &str) -> Result<BTreeMap<String, f64>, String> {
        self.predict_scores(text).map_err(|e| e.to_string())
    }
}

pub fn predictor_router(model: Arc<dyn Predictor>) -> Router {
    let router = Router::new()
        .route("/predict", post(predict))
        .route("/health", get(health))
        .with_state(model);
    with_body_limit(router)
}

async fn health(State(model): State<Arc<dyn Predictor>>) -> Json<Health> {
    Json(Health::ok(model.name()))
}

async fn predict(
    State(model): State<Arc<dyn Predictor>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<PredictPayload>, ApiError> {
    let req: PredictRequest = parse_body(body)?;
    let m = model.clone();
    let scores = tokio::task::spawn_blocking(move || m.predict(&req.text))
        .await
        .map_err(|e| ApiError::internal(format!("inference task failed: {e}")))?
        .map_err(|e| ApiError::internal(format!("inference failed: {e}")))?;
    if let Some((k, v)) = scores.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ApiError::internal(format!("inference produced non-finite {k} = {v}")));
    }
    Ok(Json(PredictPayload {
        model: model.name().to_string(),
        scores,
    }))
}
