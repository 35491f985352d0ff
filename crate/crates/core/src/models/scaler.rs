use super::{ModelError, Result};
use serde::{Deserialize, Serialize};

/// Per-target standardization with population statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits one mean / std per column of the row-major `[n, t]` matrix.
pub fn fit_scaler(targets: &[f64], t: usize) -> Result<TargetScaler> {
    if t == 0 || targets.len() % t != 0 {
        return Err(ModelError::Shape(format!("{} values do not form rows of {t}", targets.len())));
    }
    let n = targets.len() / t;
    if n < 2 {
        return Err(ModelError::Fit("scaler needs at least two rows".into()));
    }
    let mut mean = vec![0.0; t];
    let mut std = vec![0.0; t];
    for j in 0..t {
        let col = targets.iter().skip(j).step_by(t);
        let m = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|y| (y - m) * (y - m)).sum::<f64>() / n as f64;
        if !(var > 0.0) {
            return Err(ModelError::Fit(format!("target {j} has zero variance")));
        }
        mean[j] = m;
        std[j] = var.sqrt();
    }
    Ok(TargetScaler { mean, std })
}

impl TargetScaler {
    pub fn n_targets(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, y: &[f64]) -> Vec<f64> {
        let t = self.n_targets();
        y.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % t]) / self.std[i % t])
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let t = self.n_targets();
        z.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % t] + self.mean[i % t])
            .collect()
    }
}
