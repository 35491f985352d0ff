//! Baseline solvers, the bounded-head regressor, LoRA adapters, blockwise
//! 4-bit quantization, model bundles and evaluation metrics.

pub(crate) mod bundle;
mod heads;
mod linear;
mod lora;
mod metrics;
mod quant;
mod regressor;
mod ridge;
mod scaler;

pub use bundle::{
    load_regressor_bundle, read_bundle_files, save_regressor_bundle, write_bundle_files, BundleManifest,
    RegressorBundle, TensorEntry, CHECKSUM_FILE, MANIFEST_FILE,
};
pub use heads::{BoundedHead, Head, HeadKind, UnboundedHead, DEFAULT_BOUNDS};
pub use linear::{fit_linear_baseline, linear_objective, LinearClassifier, LinearConfig, LinearLoss};
pub use lora::{LoraAdapter, LoraConfig, LoraLayout};
pub use metrics::{macro_f1, mse, perplexity, r_squared, r_squared_per_target, MetricsReport};
pub use quant::{quantize_weights, QuantizedLinear, DEFAULT_BLOCK_SIZE, QMAX};
pub use regressor::{RegressionData, Regressor, RegressorConfig};
pub use ridge::{cholesky_solve, ridge_fit, RidgeRegressor};
pub use scaler::{fit_scaler, TargetScaler};

use crate::autodiff::AutodiffError;
use crate::features::{FeatureError, SparseVector};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("fit error: {0}")]
    Fit(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle format error: {0}")]
    Format(String),
    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ModelError {
    let path = path.into();
    move |source| ModelError::Io { path, source }
}

/// Densifies sparse rows into a row-major `[rows.len(), dim]` buffer.
pub fn densify(rows: &[SparseVector], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows.len() * dim];
    for (r, row) in rows.iter().enumerate() {
        for (&i, &v) in row.indices.iter().zip(&row.values) {
            out[r * dim + i] = v;
        }
    }
    out
}
