use super::{ModelError, Result};
use crate::autodiff::sigmoid_scalar;
use crate::features::SparseVector;
use crate::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearLoss {
    Hinge,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub loss: LinearLoss,
    pub steps: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            loss: LinearLoss::Hinge,
            steps: 300,
            learning_rate: 0.5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// One-vs-rest linear models, one weight row and bias per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub dim: usize,
    pub loss: LinearLoss,
    /// Row-major `[n_labels, dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean per-example loss plus `l2/2 · |w|²` for one binary problem with
/// `y ∈ {−1, +1}`. `params` is `w` followed by the bias. Returns the value
/// and its (sub)gradient; the hinge kink at margin 1 takes the zero branch.
pub fn linear_objective(params: &[f64], x: &[SparseVector], y: &[f64], loss: LinearLoss, l2: f64) -> (f64, Vec<f64>) {
    let dim = params.len() - 1;
    let (w, b) = (&params[..dim], params[dim]);
    let n = x.len().max(1) as f64;
    let mut value = 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad: Vec<f64> = w.iter().map(|v| l2 * v).chain([0.0]).collect();
    for (row, &yi) in x.iter().zip(y) {
        let s = row.dot(w) + b;
        let m = yi * s;
        let (l, dm) = match loss {
            LinearLoss::Hinge if m < 1.0 => (1.0 - m, -1.0),
            LinearLoss::Hinge => (0.0, 0.0),
            // ln(1 + e^{−m}) and its derivative −σ(−m), both stable.
            LinearLoss::Logistic => ((-m).max(0.0) + (-m.abs()).exp().ln_1p(), -sigmoid_scalar(-m)),
        };
        value += l / n;
        let ds = dm * yi / n;
        for (&i, &v) in row.indices.iter().zip(&row.values) {
            grad[i] += ds * v;
        }
        grad[dim] += ds;
    }
    (value, grad)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Full-batch gradient descent per label, labels trained in parallel.
pub fn fit_linear_baseline(x: &[SparseVector], dim: usize, labels: &[Vec<bool>], cfg: &LinearConfig) -> Result<LinearClassifier> {
    let n_labels = labels.first().map_or(0, Vec::len);
    if x.is_empty() || x.len() != labels.len() || n_labels == 0 || labels.iter().any(|l| l.len() != n_labels) {
        return Err(ModelError::Shape("labels must be a nonempty matrix with one row per input".into()));
    }
    if x.iter().any(|r| r.indices.iter().any(|&i| i >= dim)) {
        return Err(ModelError::Shape(format!("feature index out of range for dim {dim}")));
    }
    let varies = |l: usize| labels.iter().any(|r| r[l]) && labels.iter().any(|r| !r[l]);
    if !(0..n_labels).any(varies) {
        return Err(ModelError::Fit("every label is constant across the input; need at least two classes".into()));
    }
    let fitted = par::map_range(n_labels, |l| {
        let y: Vec<f64> = labels.iter().map(|r| if r[l] { 1.0 } else { -1.0 }).collect();
        let mut rng = stream(cfg.seed, l as u64);
        let mut p: Vec<f64> = (0..dim).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).chain([0.0]).collect();
        for _ in 0..cfg.steps {
            let (_, g) = linear_objective(&p, x, &y, cfg.loss, cfg.l2);
            p.iter_mut().zip(&g).for_each(|(w, d)| *w -= cfg.learning_rate * d);
        }
        p
    });
    let mut weights = Vec::with_capacity(n_labels * dim);
    let mut bias = Vec::with_capacity(n_labels);
    for p in fitted {
        weights.extend_from_slice(&p[..dim]);
        bias.push(p[dim]);
    }
    Ok(LinearClassifier {
        dim,
        loss: cfg.loss,
        weights,
        bias,
    })
}

impl LinearClassifier {
    pub fn n_labels(&self) -> usize {
        self.bias.len()
    }

    /// Decision scores, one vector of `n_labels` per input.
    pub fn decision_scores(&self, x: &[SparseVector]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..self.n_labels())
                    .map(|l| row.dot(&self.weights[l * self.dim..(l + 1) * self.dim]) + self.bias[l])
                    .collect()
            })
            .collect()
    }

    /// Multi-label predictions: positive score means the label is on.
    pub fn predict_masks(&self, x: &[SparseVector]) -> Vec<Vec<bool>> {
        self.decision_scores(x)
            .into_iter()
            .map(|s| s.into_iter().map(|v| v > 0.0).collect())
            .collect()
    }

    /// Multi-class predictions: one-hot argmax of the scores.
    pub fn predict_one_hot(&self, x: &[SparseVector]) -> Vec<Vec<bool>> {
        self.decision_scores(x)
            .into_iter()
            .map(|s| {
                let best = (0..s.len()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
                (0..s.len()).map(|i| i == best).collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn sv(pairs: &[(usize, f64)]) -> SparseVector {
        SparseVector {
            indices: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        }
    }

    fn separable() -> (Vec<SparseVector>, Vec<Vec<bool>>) {
        let x = vec![
            sv(&[(0, 1.0)]),
            sv(&[(0, 0.8), (2, 0.2)]),
            sv(&[(0, 0.9), (1, 0.1)]),
            sv(&[(1, 1.0)]),
            sv(&[(1, 0.7), (2, 0.3)]),
            sv(&[(1, 0.9), (2, 0.1)]),
        ];
        let labels = (0..6).map(|i| vec![i < 3, i >= 3]).collect();
        (x, labels)
    }

    #[test]
    fn separable_set_is_learned_by_both_losses() {
        let (x, labels) = separable();
        for loss in [LinearLoss::Hinge, LinearLoss::Logistic] {
            let cfg = LinearConfig { loss, ..Default::default() };
            let clf = fit_linear_baseline(&x, 3, &labels, &cfg).unwrap();
            assert_eq!(clf.predict_masks(&x), labels, "{loss:?}");
            assert_eq!(clf.predict_one_hot(&x), labels);
            assert_eq!(clf, fit_linear_baseline(&x, 3, &labels, &cfg).unwrap());
        }
    }

    #[test]
    fn degenerate_labels_rejected() {
        let (x, _) = separable();
        let constant = vec![vec![true]; 6];
        assert!(matches!(fit_linear_baseline(&x, 3, &constant, &LinearConfig::default()), Err(ModelError::Fit(_))));
        assert!(fit_linear_baseline(&x, 3, &[], &LinearConfig::default()).is_err());
    }

    #[test]
    fn objective_gradients_away_from_kinks() {
        let (x, _) = separable();
        let y = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let p = [1.3, -0.2, 0.05, 0.1];
        for loss in [LinearLoss::Hinge, LinearLoss::Logistic] {
            let f = |q: &[f64]| linear_objective(q, &x, &y, loss, 0.01);
            let err = grad_check(f, &p, 1e-5);
            assert!(err < 1e-6, "{loss:?}: {err}");
        }
    }
}
