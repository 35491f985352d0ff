use super::heads::{Head, HeadKind};
use super::scaler::{fit_scaler, TargetScaler};
use super::{ModelError, Result};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::trainer::Trainable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub hidden: usize,
    pub head: HeadKind,
    pub normalize_targets: bool,
    pub seed: u64,
    /// Standard deviation of the encoder weight initialization.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    1.0
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            head: HeadKind::bounded(),
            normalize_targets: true,
            seed: 0,
            init_std: default_init_std(),
        }
    }
}

/// One tanh hidden layer over dense TF-IDF rows, followed by a regression
/// head. With target normalization the head predicts standardized targets
/// and [`Regressor::predict`] maps back to the original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub config: RegressorConfig,
    input_dim: usize,
    n_targets: usize,
    store: ParamStore,
    w1: ParamId,
    b1: ParamId,
    head: Head,
    scaler: Option<TargetScaler>,
}

/// Row-major inputs `[n, d]` and targets `[n, t]` in the model's training
/// space (standardized when the model normalizes targets).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub t: usize,
}

impl RegressionData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize, t: usize) -> Result<Self> {
        if d == 0 || t == 0 || x.len() % d != 0 || y.len() % t != 0 || x.len() / d != y.len() / t {
            return Err(ModelError::Shape(format!(
                "inputs of {} values (d = {d}) do not pair with targets of {} values (t = {t})",
                x.len(),
                y.len()
            )));
        }
        Ok(Self {
            n: x.len() / d,
            x,
            y,
            d,
            t,
        })
    }

    pub fn gather(&self, batch: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut x = Vec::with_capacity(batch.len() * self.d);
        let mut y = Vec::with_capacity(batch.len() * self.t);
        for &i in batch {
            if i >= self.n {
                return Err(ModelError::Shape(format!("example {i} out of {}", self.n)));
            }
            x.extend_from_slice(&self.x[i * self.d..(i + 1) * self.d]);
            y.extend_from_slice(&self.y[i * self.t..(i + 1) * self.t]);
        }
        Ok((Tensor::new(&[batch.len(), self.d], x)?, Tensor::new(&[batch.len(), self.t], y)?))
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

impl Regressor {
    pub fn new(input_dim: usize, n_targets: usize, config: RegressorConfig) -> Result<Self> {
        if input_dim == 0 || n_targets == 0 || config.hidden == 0 {
            return Err(ModelError::Shape("regressor dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let w1 = store.add("encoder.weight", Tensor::new(&[input_dim, h], normal(&mut rng, input_dim * h, config.init_std))?, true);
        let b1 = store.add("encoder.bias", Tensor::zeros(&[h]), true);
        let hw = Tensor::new(&[h, n_targets], normal(&mut rng, h * n_targets, 1.0 / (h as f64).sqrt()))?;
        let head = Head::new(&mut store, config.head, hw, n_targets)?;
        Ok(Self {
            config,
            input_dim,
            n_targets,
            store,
            w1,
            b1,
            head,
            scaler: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn scaler(&self) -> Option<&TargetScaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<TargetScaler>) -> Result<()> {
        if let Some(s) = &scaler {
            if s.n_targets() != self.n_targets {
                return Err(ModelError::Shape(format!("scaler has {} targets, model {}", s.n_targets(), self.n_targets)));
            }
        }
        self.scaler = scaler;
        Ok(())
    }

    /// Builds training data from raw targets, fitting the scaler first when
    /// the model normalizes targets and none is set yet.
    pub fn prepare(&mut self, x: Vec<f64>, y_raw: &[f64]) -> Result<RegressionData> {
        if self.config.normalize_targets && self.scaler.is_none() {
            self.scaler = Some(fit_scaler(y_raw, self.n_targets)?);
        }
        self.dataset(x, y_raw)
    }

    /// Like [`Regressor::prepare`] but never refits; use for held-out data.
    pub fn dataset(&self, x: Vec<f64>, y_raw: &[f64]) -> Result<RegressionData> {
        let y = match (&self.scaler, self.config.normalize_targets) {
            (Some(s), _) => s.transform(y_raw),
            (None, false) => y_raw.to_vec(),
            (None, true) => return Err(ModelError::Fit("target scaler not fitted".into())),
        };
        RegressionData::new(x, y, self.input_dim, self.n_targets)
    }

    /// Training-space predictions for a `[n, d]` input node.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w1 = tape.param(&self.store, self.w1);
        let b1 = tape.param(&self.store, self.b1);
        let z = tape.matmul(x, w1)?;
        let z = tape.add(z, b1)?;
        let h = tape.tanh(z);
        self.head.forward(tape, &self.store, h)
    }

    /// Predictions on the original target scale for row-major `[n, d]` input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() % self.input_dim != 0 {
            return Err(ModelError::Shape(format!("{} inputs are not rows of {}", x.len(), self.input_dim)));
        }
        let n = x.len() / self.input_dim;
        let mut tape = Tape::new();
        let input = tape.constant(Tensor::new(&[n, self.input_dim], x.to_vec())?);
        let out = self.forward(&mut tape, input)?;
        let z = tape.value(out).data().to_vec();
        Ok(match &self.scaler {
            Some(s) => s.inverse(&z),
            None => z,
        })
    }
}

impl Trainable for Regressor {
    type Data = RegressionData;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn example_count(&self, data: &RegressionData) -> usize {
        data.n
    }

    fn loss(&self, tape: &mut Tape, data: &RegressionData, batch: &[usize]) -> Result<Var> {
        let (x, y) = data.gather(batch)?;
        let x = tape.constant(x);
        let y = tape.constant(y);
        let pred = self.forward(tape, x)?;
        Ok(tape.mse(pred, y)?)
    }
}
