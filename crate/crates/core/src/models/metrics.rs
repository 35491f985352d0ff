use super::{ModelError, Result};
use serde::{Deserialize, Serialize};

/// Coefficient of determination `1 − SS_res / SS_tot`. Unbounded below.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(ModelError::Shape(format!(
            "r_squared needs equal nonzero lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(ModelError::UndefinedMetric("r_squared of a constant target".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Per-target R² over row-major `[n, t]` matrices.
pub fn r_squared_per_target(y_true: &[f64], y_pred: &[f64], t: usize) -> Result<Vec<f64>> {
    if t == 0 || y_true.len() != y_pred.len() || y_true.len() % t != 0 {
        return Err(ModelError::Shape("r_squared_per_target: bad matrix shapes".into()));
    }
    (0..t)
        .map(|j| {
            let a: Vec<f64> = y_true.iter().skip(j).step_by(t).copied().collect();
            let b: Vec<f64> = y_pred.iter().skip(j).step_by(t).copied().collect();
            r_squared(&a, &b)
        })
        .collect()
}

/// Unweighted mean of per-label F1. A label with neither true nor predicted
/// positives scores 1.
pub fn macro_f1(true_masks: &[Vec<bool>], pred_masks: &[Vec<bool>], n_labels: usize) -> Result<f64> {
    if true_masks.len() != pred_masks.len()
        || true_masks
            .iter()
            .chain(pred_masks)
            .any(|m| m.len() != n_labels)
    {
        return Err(ModelError::Shape("macro_f1: masks differ in shape".into()));
    }
    if n_labels == 0 {
        return Err(ModelError::Shape("macro_f1: zero labels".into()));
    }
    let mut total = 0.0;
    for l in 0..n_labels {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (t, p) in true_masks.iter().zip(pred_masks) {
            match (t[l], p[l]) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        total += if tp + fp + fneg == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        };
    }
    Ok(total / n_labels as f64)
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> f64 {
    y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y_true.len().max(1) as f64
}

/// `exp(mean_nll)`.
pub fn perplexity(mean_nll: f64) -> f64 {
    mean_nll.exp()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: Vec<f64>,
    pub avg_r2: f64,
    pub macro_f1: Option<f64>,
    pub mse: f64,
    pub perplexity: Option<f64>,
}

impl MetricsReport {
    pub fn regression(y_true: &[f64], y_pred: &[f64], t: usize) -> Result<Self> {
        let r2 = r_squared_per_target(y_true, y_pred, t)?;
        let avg_r2 = r2.iter().sum::<f64>() / r2.len() as f64;
        Ok(Self {
            r2,
            avg_r2,
            macro_f1: None,
            mse: mse(y_true, y_pred),
            perplexity: None,
        })
    }
}
