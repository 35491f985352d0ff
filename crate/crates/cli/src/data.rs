//! Dataset preparation: synthetic corpora and ingestion of CSV / JSON lines.

use anyhow::{bail, Context, Result};
use psykit_core::corpus::{gen_synthetic, ingest, read_records, DatasetManifest, MmapStore, SyntheticConfig, TaskKind};
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct StoreSummary {
    pub path: String,
    pub records: usize,
    pub targets: Vec<String>,
    pub file_bytes: usize,
    pub oracle_r2: Option<f64>,
}

fn summarize(store: &MmapStore, oracle_r2: Option<f64>) -> StoreSummary {
    StoreSummary {
        path: store.path().display().to_string(),
        records: store.len(),
        targets: store.manifest().target_names.clone(),
        file_bytes: store.file_len(),
        oracle_r2,
    }
}

pub struct SyntheticArgs {
    pub n: usize,
    pub vocab_size: usize,
    pub n_targets: usize,
    pub oracle_r2: f64,
    pub seed: u64,
}

/// Writes a seeded regression corpus straight into a store.
pub fn gen_synthetic_store(args: &SyntheticArgs, out: &Path) -> Result<StoreSummary> {
    if !(args.oracle_r2 > 0.0 && args.oracle_r2 <= 1.0) {
        bail!("oracle R² must be in (0, 1]");
    }
    let noise = SyntheticConfig::noise_for_oracle_r2(args.oracle_r2);
    let cfg = SyntheticConfig::new(TaskKind::MultiOutputRegression, args.n, args.vocab_size, noise, args.seed)
        .with_targets(args.n_targets);
    let syn = gen_synthetic(&cfg)?;
    let store = ingest(&syn.records, &syn.manifest, out)?;
    Ok(summarize(&store, Some(syn.oracle_r2)))
}

/// Ingests a CSV (`id,text,t0..tk`) or JSON-lines file. Target names default
/// to the CSV header or `t0..`.
pub fn ingest_file(input: &Path, out: &Path, name: &str, task: TaskKind, target_names: Option<Vec<String>>) -> Result<StoreSummary> {
    let records = read_records(input).with_context(|| format!("reading {}", input.display()))?;
    let Some(first) = records.first() else {
        bail!("{} holds no records", input.display());
    };
    let k = first.targets.len();
    let names = match target_names {
        Some(n) if n.len() != k => bail!("{} target names given but records carry {k} targets", n.len()),
        Some(n) => n,
        None => csv_header_targets(input).filter(|h| h.len() == k).unwrap_or_else(|| (0..k).map(|i| format!("t{i}")).collect()),
    };
    let manifest = DatasetManifest::new(name, task, names, 0);
    let store = ingest(&records, &manifest, out)?;
    Ok(summarize(&store, None))
}

fn csv_header_targets(input: &Path) -> Option<Vec<String>> {
    if input.extension().is_some_and(|e| e == "jsonl" || e == "json") {
        return None;
    }
    let raw = std::fs::read_to_string(input).ok()?;
    let header = raw.lines().next()?;
    Some(header.split(',').skip(2).map(|h| h.trim().to_string()).collect())
}
