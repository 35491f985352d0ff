//! Regressor training runs over a store, the checkpoint sweep, the ablation
//! table and the preemption drill.

use crate::{write_json, write_text};
use anyhow::{anyhow, bail, Context, Result};
use psykit_core::corpus::{gen_synthetic, split, MmapStore, SplitSpec, SyntheticConfig, TaskKind};
use psykit_core::features::{fit_tfidf, TfIdfModel};
use psykit_core::models::{save_regressor_bundle, MetricsReport, RegressionData, Regressor, RegressorConfig};
use psykit_core::trainer::{
    run_ablation, sweep_checkpoints, train, AblationReport, CheckpointStore, OptimizerKind, SweepReport, TrainError,
    TrainReport, Trainable, TrainerConfig,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BUNDLE_DIR: &str = "bundle";

fn default_name() -> String {
    "model".into()
}
fn default_max_features() -> usize {
    5000
}
fn default_min_df() -> usize {
    2
}
fn default_split() -> SplitSpec {
    SplitSpec::new(0.8, 0.1, 0.1, 0)
}

/// Everything `train` needs besides the data; copied into the run directory
/// so `sweep` can rebuild the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub model: RegressorConfig,
    #[serde(default = "default_max_features")]
    pub max_features: usize,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    /// Store the exported bundle's matrices as 4-bit codes.
    #[serde(default)]
    pub quantize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Model, featurizer and the three splits, built deterministically from a
/// store and a config.
pub struct Prepared {
    pub model: Regressor,
    pub tfidf: TfIdfModel,
    pub target_names: Vec<String>,
    pub train: RegressionData,
    pub val: RegressionData,
    pub test_x: Vec<f64>,
    pub test_y: Vec<f64>,
}

pub fn prepare(cfg: &RunConfig, store_path: &Path) -> Result<Prepared> {
    let store = MmapStore::open(store_path).with_context(|| format!("opening store {}", store_path.display()))?;
    if store.manifest().task != TaskKind::MultiOutputRegression {
        bail!("the regressor trains on regression stores only");
    }
    let records = store.read_all()?;
    let splits = split(records.len(), &cfg.split)?;
    let texts = |idx: &[usize]| idx.iter().map(|&i| records[i].text).collect::<Vec<&str>>();
    let targets = |idx: &[usize]| idx.iter().flat_map(|&i| records[i].targets()).collect::<Vec<f64>>();
    let train_texts = texts(&splits.train);
    let tfidf = fit_tfidf(&train_texts, cfg.max_features, cfg.min_df)?;
    let mut model = Regressor::new(tfidf.dim(), store.target_count(), cfg.model.clone())?;
    let train = model.prepare(tfidf.transform_dense(&train_texts), &targets(&splits.train))?;
    let val = model.dataset(tfidf.transform_dense(&texts(&splits.val)), &targets(&splits.val))?;
    Ok(Prepared {
        test_x: tfidf.transform_dense(&texts(&splits.test)),
        test_y: targets(&splits.test),
        target_names: store.manifest().target_names.clone(),
        model,
        tfidf,
        train,
        val,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Held-out metrics; absent when the run was killed.
    pub test_metrics: Option<MetricsReport>,
    pub bundle: Option<PathBuf>,
}

fn curve_csv(report: &TrainReport) -> String {
    let mut s = String::from("step,split,loss\n");
    for (step, l) in &report.train_losses {
        s.push_str(&format!("{step},train,{l}\n"));
    }
    for (step, l) in &report.val_losses {
        s.push_str(&format!("{step},val,{l}\n"));
    }
    s
}

/// Trains into `out` (checkpoints, curves, metrics, bundle). Existing
/// checkpoints are resumed only when `resume` is set.
pub fn train_run(cfg: &RunConfig, data: &Path, out: &Path, resume: bool) -> Result<TrainOutcome> {
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let store = CheckpointStore::new(&ckpt_dir, cfg.trainer.save_total_limit)?;
    if !resume && !store.list()?.is_empty() {
        bail!("{} already holds checkpoints; pass --resume to continue", ckpt_dir.display());
    }
    let mut p = prepare(cfg, data)?;
    write_json(&out.join(RUN_FILE), cfg)?;
    let report = match train(&cfg.trainer, &mut p.model, &p.train, Some(&p.val), Some(&store)) {
        Ok(r) => r,
        Err(TrainError::Diverged { step, loss, report }) => {
            write_json(&out.join("train_report.json"), &report)?;
            bail!("training diverged at step {step} (loss {loss})");
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&out.join("train_report.json"), &report)?;
    write_text(&out.join("train_curve.csv"), &curve_csv(&report))?;
    if report.killed {
        return Ok(TrainOutcome {
            report,
            test_metrics: None,
            bundle: None,
        });
    }
    let pred = p.model.predict(&p.test_x)?;
    let metrics = MetricsReport::regression(&p.test_y, &pred, p.model.n_targets())?;
    write_json(&out.join("metrics.json"), &metrics)?;
    let bundle = out.join(BUNDLE_DIR);
    save_regressor_bundle(&bundle, &cfg.name, &p.model, &p.tfidf, &p.target_names, cfg.quantize)?;
    Ok(TrainOutcome {
        report,
        test_metrics: Some(metrics),
        bundle: Some(bundle),
    })
}

/// Scores every checkpoint of a run on its validation split.
pub fn sweep_run(run_dir: &Path, data: &Path, csv: Option<&Path>) -> Result<SweepReport> {
    let cfg = RunConfig::load(&run_dir.join(RUN_FILE))?;
    let p = prepare(&cfg, data)?;
    let report = sweep_checkpoints(run_dir.join(CHECKPOINT_DIR), &p.model, &p.val)?;
    if let Some(csv) = csv {
        write_text(csv, &report.to_csv())?;
    }
    Ok(report)
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut s = String::from("config,final_avg_r2,diverged,diverged_at_step\n");
    for r in &report.rows {
        let step = r.diverged_at_step.map(|s| s.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.config_name, r.final_avg_r2, r.diverged, step));
    }
    s.push_str(&format!("ridge,{},false,\n", report.ridge_avg_r2));
    s
}

/// Runs the ablation and writes `<report>` plus a sibling `.csv`.
pub fn ablate(seed: u64, report_path: &Path) -> Result<AblationReport> {
    let report = run_ablation(seed)?;
    write_json(report_path, &report)?;
    write_text(&report_path.with_extension("csv"), &ablation_csv(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct PreemptOutcome {
    pub kill_at: u64,
    pub max_steps: u64,
    pub killed_at_step: u64,
    pub resumed_from: u64,
    pub identical: bool,
    pub retained: Vec<u64>,
}

pub struct PreemptArgs {
    pub kill_at: u64,
    pub max_steps: u64,
    pub save_steps: u64,
    pub save_total_limit: usize,
    pub seed: u64,
}

impl Default for PreemptArgs {
    fn default() -> Self {
        Self {
            kill_at: 237,
            max_steps: 500,
            save_steps: 25,
            save_total_limit: 3,
            seed: 99,
        }
    }
}

/// Trains a small regressor uninterrupted, then again with a kill at
/// `kill_at` followed by a resume, and compares the final parameters bitwise.
pub fn preempt_test(args: &PreemptArgs, work: &Path) -> Result<PreemptOutcome> {
    if args.kill_at == 0 || args.kill_at > args.max_steps {
        bail!("kill-at must be in 1..={}", args.max_steps);
    }
    let syn = gen_synthetic(&SyntheticConfig::new(TaskKind::MultiOutputRegression, 120, 40, 0.5, args.seed))?;
    let docs: Vec<&str> = syn.records.iter().map(|r| r.text.as_str()).collect();
    let tfidf = fit_tfidf(&docs, 64, 1)?;
    let y: Vec<f64> = syn.records.iter().flat_map(|r| r.targets.iter().copied()).collect();
    let mut template = Regressor::new(
        tfidf.dim(),
        syn.manifest.target_count(),
        RegressorConfig {
            hidden: 8,
            seed: args.seed,
            ..Default::default()
        },
    )?;
    let data = template.prepare(tfidf.transform_dense(&docs), &y)?;
    let cfg = TrainerConfig {
        max_steps: args.max_steps,
        batch_size: 16,
        learning_rate: 0.05,
        optimizer: OptimizerKind::adam(),
        save_steps: args.save_steps,
        save_total_limit: args.save_total_limit,
        eval_steps: 0,
        seed: args.seed,
        ..Default::default()
    };

    let mut reference = template.clone();
    let ref_store = CheckpointStore::new(work.join("reference"), cfg.save_total_limit)?;
    train(&cfg, &mut reference, &data, None, Some(&ref_store))?;

    let store = CheckpointStore::new(work.join("preempted"), cfg.save_total_limit)?;
    let mut first = template.clone();
    let killed_cfg = TrainerConfig {
        kill_after_steps: Some(args.kill_at),
        ..cfg.clone()
    };
    let killed = train(&killed_cfg, &mut first, &data, None, Some(&store))?;
    let mut resumed = template.clone();
    let second = train(&cfg, &mut resumed, &data, None, Some(&store))?;
    if second.end_step != args.max_steps {
        return Err(anyhow!("resumed run stopped at {}", second.end_step));
    }
    Ok(PreemptOutcome {
        kill_at: args.kill_at,
        max_steps: args.max_steps,
        killed_at_step: killed.end_step,
        resumed_from: second.start_step,
        identical: reference.params().to_le_bytes() == resumed.params().to_le_bytes(),
        retained: store.retained()?,
    })
}
