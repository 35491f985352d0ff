//! Three-way comparison of output-head and target-scaling choices on a
//! synthetic regression corpus with a known R² ceiling.

use super::{train, OptimizerKind, Result, Schedule, TrainError, TrainerConfig};
use crate::corpus::{gen_synthetic, split, SplitSpec, SyntheticConfig, TaskKind};
use crate::features::{fit_tfidf, SparseVector};
use crate::models::{densify, r_squared_per_target, HeadKind, Regressor, RegressorConfig, RidgeRegressor};
use crate::par;
use serde::{Deserialize, Serialize};

pub const ABLATION_ROWS: [&str; 3] = ["unbounded+raw", "unbounded+normalized", "bounded+normalized"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub n: usize,
    pub vocab_size: usize,
    pub n_targets: usize,
    pub oracle_r2: f64,
    /// Multiplier applied to the generated targets before training.
    pub raw_scale: f64,
    pub hidden: usize,
    pub init_std: f64,
    pub max_steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub max_features: usize,
    pub min_df: usize,
    pub ridge_lambda: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            vocab_size: 300,
            n_targets: 2,
            oracle_r2: 0.6,
            raw_scale: 100.0,
            hidden: 64,
            init_std: 1.0,
            max_steps: 12000,
            batch_size: 32,
            learning_rate: 0.1,
            weight_decay: 7e-3,
            optimizer: OptimizerKind::Sgd,
            schedule: Schedule::LinearDecay,
            max_features: 5000,
            min_df: 2,
            ridge_lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config_name: String,
    /// Held-out mean per-target R² on the original target scale. Serialized
    /// as `null` when predictions are non-finite.
    pub final_avg_r2: f64,
    pub diverged: bool,
    pub diverged_at_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub oracle_r2: f64,
    pub rows: Vec<AblationRow>,
    /// TF-IDF ridge baseline on the same split, for reference.
    pub ridge_avg_r2: f64,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config_name == name)
    }

    /// Whether the rows are strictly increasing in the listed order.
    pub fn ordering_holds(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].final_avg_r2 < w[1].final_avg_r2)
    }
}

struct Prepared {
    oracle_r2: f64,
    dim: usize,
    train_sparse: Vec<SparseVector>,
    test_sparse: Vec<SparseVector>,
    train_x: Vec<f64>,
    test_x: Vec<f64>,
    train_y: Vec<f64>,
    test_y: Vec<f64>,
}

fn prepare(cfg: &AblationConfig, seed: u64) -> Result<Prepared> {
    let noise = SyntheticConfig::noise_for_oracle_r2(cfg.oracle_r2);
    let syn = SyntheticConfig::new(TaskKind::MultiOutputRegression, cfg.n, cfg.vocab_size, noise, seed).with_targets(cfg.n_targets);
    let corpus = gen_synthetic(&syn).map_err(|e| TrainError::Config(e.to_string()))?;
    let parts = split(corpus.records.len(), &SplitSpec::new(0.8, 0.1, 0.1, seed)).map_err(|e| TrainError::Config(e.to_string()))?;
    let texts = |idx: &[usize]| idx.iter().map(|&i| corpus.records[i].text.clone()).collect::<Vec<_>>();
    let targets = |idx: &[usize]| {
        idx.iter()
            .flat_map(|&i| corpus.records[i].targets.iter().map(|v| v * cfg.raw_scale))
            .collect::<Vec<_>>()
    };
    // Validation rows are folded into training; the held-out test split is
    // what every row reports on.
    let train_idx: Vec<usize> = parts.train.iter().chain(&parts.val).copied().collect();
    let train_texts = texts(&train_idx);
    let test_texts = texts(&parts.test);
    let tfidf = fit_tfidf(&train_texts, cfg.max_features, cfg.min_df).map_err(|e| TrainError::Config(e.to_string()))?;
    let dim = tfidf.dim();
    let train_sparse = tfidf.transform_batch(&train_texts);
    let test_sparse = tfidf.transform_batch(&test_texts);
    Ok(Prepared {
        oracle_r2: corpus.oracle_r2,
        dim,
        train_x: densify(&train_sparse, dim),
        test_x: densify(&test_sparse, dim),
        train_sparse,
        test_sparse,
        train_y: targets(&train_idx),
        test_y: targets(&parts.test),
    })
}

fn avg_r2(y: &[f64], pred: &[f64], t: usize) -> f64 {
    if pred.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    match r_squared_per_target(y, pred, t) {
        Ok(r) => r.iter().sum::<f64>() / t as f64,
        Err(_) => f64::NEG_INFINITY,
    }
}

fn run_row(cfg: &AblationConfig, data: &Prepared, seed: u64, row: usize) -> Result<AblationRow> {
    let (head, normalize) = match row {
        0 => (HeadKind::Unbounded, false),
        1 => (HeadKind::Unbounded, true),
        _ => (HeadKind::bounded(), true),
    };
    let rc = RegressorConfig {
        hidden: cfg.hidden,
        head,
        normalize_targets: normalize,
        seed,
        init_std: cfg.init_std,
    };
    let mut model = Regressor::new(data.dim, cfg.n_targets, rc)?;
    let train_data = model.prepare(data.train_x.clone(), &data.train_y)?;
    let tc = TrainerConfig {
        max_steps: cfg.max_steps,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        optimizer: cfg.optimizer,
        schedule: cfg.schedule,
        save_steps: cfg.max_steps,
        eval_steps: 0,
        seed,
        ..Default::default()
    };
    let diverged_at = match train(&tc, &mut model, &train_data, None, None) {
        Ok(_) => None,
        Err(TrainError::Diverged { step, .. }) => Some(step),
        Err(e) => return Err(e),
    };
    // A diverged run keeps its last finite parameters.
    let pred = model.predict(&data.test_x)?;
    Ok(AblationRow {
        config_name: ABLATION_ROWS[row].to_string(),
        final_avg_r2: avg_r2(&data.test_y, &pred, cfg.n_targets),
        diverged: diverged_at.is_some(),
        diverged_at_step: diverged_at,
    })
}

pub fn run_ablation(seed: u64) -> Result<AblationReport> {
    run_ablation_with(&AblationConfig::default(), seed)
}

/// Trains the three configurations (in parallel) with one encoder
/// initialization, step budget, learning rate and sampler seed.
pub fn run_ablation_with(cfg: &AblationConfig, seed: u64) -> Result<AblationReport> {
    let data = prepare(cfg, seed)?;
    let rows = par::map_range(3, |i| run_row(cfg, &data, seed, i));
    let ridge = RidgeRegressor::fit(&data.train_sparse, data.dim, &data.train_y, cfg.n_targets, cfg.ridge_lambda)?;
    let ridge_avg_r2 = avg_r2(&data.test_y, &ridge.predict(&data.test_sparse), cfg.n_targets);
    let out = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        seed,
        oracle_r2: data.oracle_r2,
        rows: out,
        ridge_avg_r2,
    })
}
