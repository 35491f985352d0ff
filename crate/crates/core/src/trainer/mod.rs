//! Deterministic resumable training with checkpoint rotation, a post-hoc
//! checkpoint sweep and the regression-stabilization ablation.
//!
//! Training state (parameters, optimizer moments, schedule position, sampler
//! RNG and epoch cursor) is checkpointed completely, so a run that is killed
//! and resumed ends bit-identical to one that never stopped.

mod ablation;
mod checkpoint;
mod optim;
mod sweep;

pub use ablation::{run_ablation, run_ablation_with, AblationConfig, AblationReport, AblationRow, ABLATION_ROWS};
pub use checkpoint::{
    checkpoint_dir_name, latest_checkpoint, BatchSampler, Checkpoint, CheckpointStore, DataCursor, RngState,
    ScheduleState, SkippedCheckpoint,
};
pub use optim::{clip_grad_norm, OptimizerKind, OptimizerState, Schedule};
pub use sweep::{select_best, sweep_checkpoints, SweepReport};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::models::{self, ModelError};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

/// Losses above this are treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// A model the trainer can optimize: a parameter store plus a loss over a
/// batch of example indices.
pub trait Trainable: Clone + Send + Sync {
    type Data: Sync;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn example_count(&self, data: &Self::Data) -> usize;
    /// Records the scalar loss over `batch` on `tape`.
    fn loss(&self, tape: &mut Tape, data: &Self::Data, batch: &[usize]) -> models::Result<Var>;
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("cannot resume: checkpoint {path} is corrupt ({reason}) and no valid checkpoint remains")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: u64, loss: f64, report: Box<TrainReport> },
    #[error("no valid checkpoints in {0}")]
    NoCheckpoints(PathBuf),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub max_steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub save_steps: u64,
    pub save_total_limit: usize,
    /// Zero disables periodic evaluation.
    pub eval_steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// L2 penalty coefficient added to the gradient of every trainable value.
    #[serde(default)]
    pub weight_decay: f64,
    /// Stop abruptly after this many steps of the current invocation, after
    /// the update and before any save at that step.
    #[serde(default)]
    pub kill_after_steps: Option<u64>,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            batch_size: 32,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            save_steps: 100,
            save_total_limit: 3,
            eval_steps: 100,
            seed: 0,
            grad_clip: None,
            weight_decay: 0.0,
            kill_after_steps: None,
            schedule: Schedule::Constant,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.max_steps == 0 || self.batch_size == 0 {
            return bad("max_steps and batch_size must be positive");
        }
        if self.save_steps == 0 || self.save_steps > self.max_steps {
            return bad("save_steps must be in 1..=max_steps");
        }
        if self.save_total_limit == 0 {
            return bad("save_total_limit must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative and finite");
        }
        if self.kill_after_steps == Some(0) {
            return bad("kill_after_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Step the run resumed from (0 for a fresh start).
    pub start_step: u64,
    /// Last completed step.
    pub end_step: u64,
    pub train_losses: Vec<(u64, f64)>,
    pub val_losses: Vec<(u64, f64)>,
    pub saved_steps: Vec<u64>,
    pub killed: bool,
    pub skipped_checkpoints: Vec<String>,
}

/// Loss over every example of `data`, in index order, as one batch.
pub fn evaluate<M: Trainable>(model: &M, data: &M::Data) -> Result<f64> {
    let n = model.example_count(data);
    let all: Vec<usize> = (0..n).collect();
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, data, &all)?;
    Ok(tape.value(loss).item())
}

fn check_layout(model: &ParamStore, ckpt: &ParamStore) -> Result<()> {
    if model.len() != ckpt.len() {
        return Err(TrainError::Mismatch(format!("{} parameters vs {} in checkpoint", model.len(), ckpt.len())));
    }
    for ((_, a), (_, b)) in model.iter().zip(ckpt.iter()) {
        if a.name != b.name || a.tensor.shape() != b.tensor.shape() || a.trainable != b.trainable {
            return Err(TrainError::Mismatch(format!("parameter {} differs from checkpoint entry {}", a.name, b.name)));
        }
    }
    Ok(())
}

/// Runs from the latest valid checkpoint in `store` (or step 0) up to
/// `max_steps`. Without a store nothing is saved or resumed.
pub fn train<M: Trainable>(
    config: &TrainerConfig,
    model: &mut M,
    train_data: &M::Data,
    val_data: Option<&M::Data>,
    store: Option<&CheckpointStore>,
) -> Result<TrainReport> {
    config.validate()?;
    let n = model.example_count(train_data);
    if n == 0 {
        return Err(TrainError::Config("training data is empty".into()));
    }
    let n_trainable = model.params().count(true);
    let mut report = TrainReport::default();

    let mut sampler = BatchSampler::new(config.seed, n);
    let mut opt = OptimizerState::new(config.optimizer, n_trainable);
    let mut step = 0u64;

    if let Some(store) = store {
        let (latest, skipped) = store.latest()?;
        report.skipped_checkpoints = skipped.iter().map(|s| s.path.display().to_string()).collect();
        match latest {
            Some(ckpt) => {
                check_layout(model.params(), &ckpt.params)?;
                if ckpt.optimizer_kind != config.optimizer {
                    return Err(TrainError::Mismatch("optimizer differs from checkpoint".into()));
                }
                *model.params_mut() = ckpt.params;
                opt = ckpt.optimizer;
                sampler = BatchSampler::restore(&ckpt.rng, &ckpt.data, n)?;
                step = ckpt.step;
                log::info!("resuming from step {step}");
            }
            None => {
                if let Some(first) = skipped.into_iter().next() {
                    return Err(TrainError::CorruptCheckpoint {
                        path: first.path,
                        reason: first.reason,
                    });
                }
            }
        }
    }
    report.start_step = step;
    report.end_step = step;

    let mut tape = Tape::new();
    let mut run_steps = 0u64;
    while step < config.max_steps {
        step += 1;
        let batch = sampler.next_batch(config.batch_size);
        tape.reset();
        let loss = model.loss(&mut tape, train_data, &batch)?;
        let value = tape.value(loss).item();
        if !value.is_finite() || value > DIVERGENCE_THRESHOLD {
            return Err(TrainError::Diverged {
                step,
                loss: value,
                report: Box::new(report),
            });
        }
        let grads = tape.backward(loss).map_err(ModelError::from)?;
        let mut flat_grads = model.params().flatten_grads(&grads);
        if let Some(c) = config.grad_clip {
            clip_grad_norm(&mut flat_grads, c);
        }
        let lr = config.schedule.learning_rate(config.learning_rate, step, config.max_steps);
        let mut flat = model.params().trainable_flat();
        if config.weight_decay > 0.0 {
            for (g, p) in flat_grads.iter_mut().zip(&flat) {
                *g += config.weight_decay * p;
            }
        }
        opt.update(config.optimizer, &mut flat, &flat_grads, lr);
        model.params_mut().set_trainable_flat(&flat);
        report.train_losses.push((step, value));
        report.end_step = step;
        run_steps += 1;

        let mut val_loss = None;
        if let Some(val) = val_data {
            if config.eval_steps > 0 && step % config.eval_steps == 0 {
                let v = evaluate(model, val)?;
                report.val_losses.push((step, v));
                val_loss = Some(v);
            }
        }
        if config.kill_after_steps == Some(run_steps) && step < config.max_steps {
            report.killed = true;
            log::warn!("halting after {run_steps} steps at step {step} (simulated preemption)");
            return Ok(report);
        }
        if let Some(store) = store {
            if step % config.save_steps == 0 || step == config.max_steps {
                let (rng, data) = sampler.state();
                let mut ckpt = Checkpoint {
                    step,
                    params: model.params().clone(),
                    optimizer_kind: config.optimizer,
                    optimizer: opt.clone(),
                    schedule: ScheduleState {
                        kind: config.schedule,
                        base_lr: config.learning_rate,
                        max_steps: config.max_steps,
                        current_lr: lr,
                    },
                    rng,
                    data,
                    val_loss,
                    checksum: String::new(),
                };
                store.save(&mut ckpt)?;
                report.saved_steps.push(step);
            }
        }
    }
    Ok(report)
}
