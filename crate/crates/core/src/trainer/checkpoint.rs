//! Checkpoint directories, `checkpoint-<step>` under one store directory.
//!
//! Each holds `manifest.json` (step, parameter layout, schedule, RNG and
//! data-cursor state), `params.bin`, `optimizer.bin` and the checksum list.

use super::optim::{OptimizerKind, OptimizerState, Schedule};
use super::{TrainError, Result};
use crate::autodiff::{ParamStore, Tensor};
use crate::models::bundle::{read_bundle_files, write_bundle_files_with};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

const PREFIX: &str = "checkpoint-";

pub fn checkpoint_dir_name(step: u64) -> String {
    format!("{PREFIX}{step:08}")
}

fn parse_step(name: &str) -> Option<u64> {
    let digits = name.strip_prefix(PREFIX)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal string; JSON numbers cannot carry a u128 reliably.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| TrainError::Format(format!("invalid rng {what}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed"))?
            .try_into()
            .map_err(|_| bad("seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

/// Seeded epoch-permutation batch sampler.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    pub permutation: Vec<usize>,
    pub cursor: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCursor {
    pub epoch: u64,
    pub cursor: usize,
    pub permutation: Vec<usize>,
}

impl BatchSampler {
    pub fn new(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut permutation: Vec<usize> = (0..n).collect();
        permutation.shuffle(&mut rng);
        Self {
            rng,
            permutation,
            cursor: 0,
            epoch: 0,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let n = self.permutation.len();
        let mut out = Vec::with_capacity(size);
        while out.len() < size && n > 0 {
            if self.cursor == n {
                self.permutation.sort_unstable();
                self.permutation.shuffle(&mut self.rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            out.push(self.permutation[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    pub fn state(&self) -> (RngState, DataCursor) {
        (
            RngState::capture(&self.rng),
            DataCursor {
                epoch: self.epoch,
                cursor: self.cursor,
                permutation: self.permutation.clone(),
            },
        )
    }

    pub fn restore(rng: &RngState, data: &DataCursor, n: usize) -> Result<Self> {
        let mut sorted = data.permutation.clone();
        sorted.sort_unstable();
        if sorted.len() != n || sorted.iter().enumerate().any(|(i, &v)| i != v) || data.cursor > n {
            return Err(TrainError::Mismatch(format!("data cursor does not describe {n} training examples")));
        }
        Ok(Self {
            rng: rng.restore()?,
            permutation: data.permutation.clone(),
            cursor: data.cursor,
            epoch: data.epoch,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub kind: Schedule,
    pub base_lr: f64,
    pub max_steps: u64,
    pub current_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    step: u64,
    params: Vec<ParamEntry>,
    optimizer: OptimizerKind,
    optimizer_step: u64,
    optimizer_len: usize,
    schedule: ScheduleState,
    rng: RngState,
    data: DataCursor,
    val_loss: Option<f64>,
}

/// Complete training state at a step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: ParamStore,
    pub optimizer_kind: OptimizerKind,
    pub optimizer: OptimizerState,
    pub schedule: ScheduleState,
    pub rng: RngState,
    pub data: DataCursor,
    pub val_loss: Option<f64>,
    /// sha256 over the per-file checksum list; filled on save and load.
    pub checksum: String,
}

impl Checkpoint {
    fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let manifest = Manifest {
            step: self.step,
            params: self
                .params
                .iter()
                .map(|(_, p)| ParamEntry {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    trainable: p.trainable,
                })
                .collect(),
            optimizer: self.optimizer_kind,
            optimizer_step: self.optimizer.step,
            optimizer_len: self.optimizer.m.len(),
            schedule: self.schedule.clone(),
            rng: self.rng.clone(),
            data: self.data.clone(),
            val_loss: self.val_loss,
        };
        let opt: Vec<u8> = self
            .optimizer
            .m
            .iter()
            .chain(&self.optimizer.v)
            .flat_map(|x| x.to_le_bytes())
            .collect();
        Ok(vec![
            ("manifest.json".into(), serde_json::to_vec_pretty(&manifest)?),
            ("params.bin".into(), self.params.to_le_bytes()),
            ("optimizer.bin".into(), opt),
        ])
    }

    fn listing_checksum(files: &[(String, Vec<u8>)]) -> String {
        let mut h = Sha256::new();
        for (name, bytes) in files {
            h.update(format!("{}  {name}\n", hex::encode(Sha256::digest(bytes))));
        }
        hex::encode(h.finalize())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let files = read_bundle_files(dir)?;
        let get = |n: &str| {
            files
                .get(n)
                .ok_or_else(|| TrainError::Format(format!("{} lacks {n}", dir.display())))
        };
        let manifest: Manifest = serde_json::from_slice(get("manifest.json")?)?;
        let raw = get("params.bin")?;
        let total: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if raw.len() != total * 8 {
            return Err(TrainError::Format(format!("params.bin holds {} bytes, expected {}", raw.len(), total * 8)));
        }
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut params = ParamStore::new();
        let mut at = 0;
        for p in &manifest.params {
            let n: usize = p.shape.iter().product();
            let t = Tensor::new(&p.shape, values[at..at + n].to_vec()).map_err(crate::models::ModelError::from)?;
            params.add(p.name.clone(), t, p.trainable);
            at += n;
        }
        let opt_raw = get("optimizer.bin")?;
        if opt_raw.len() != manifest.optimizer_len * 16 {
            return Err(TrainError::Format("optimizer.bin has the wrong length".into()));
        }
        let opt: Vec<f64> = opt_raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (m, v) = opt.split_at(manifest.optimizer_len);
        let ordered: Vec<(String, Vec<u8>)> = ["manifest.json", "params.bin", "optimizer.bin"]
            .iter()
            .map(|n| (n.to_string(), files[*n].clone()))
            .collect();
        Ok(Self {
            step: manifest.step,
            params,
            optimizer_kind: manifest.optimizer,
            optimizer: OptimizerState {
                step: manifest.optimizer_step,
                m: m.to_vec(),
                v: v.to_vec(),
            },
            schedule: manifest.schedule,
            rng: manifest.rng,
            data: manifest.data,
            val_loss: manifest.val_loss,
            checksum: Self::listing_checksum(&ordered),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCheckpoint {
    pub path: PathBuf,
    pub reason: String,
}

/// A directory of step checkpoints with rotation.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    pub directory: PathBuf,
    pub save_total_limit: usize,
    /// Test hook: abort the next save after this many files are written.
    pub fail_after_files: Option<usize>,
}

impl CheckpointStore {
    pub fn new(directory: impl Into<PathBuf>, save_total_limit: usize) -> Result<Self> {
        if save_total_limit == 0 {
            return Err(TrainError::Config("save_total_limit must be at least 1".into()));
        }
        let directory = directory.into();
        fs::create_dir_all(&directory).map_err(|source| TrainError::Io {
            path: directory.clone(),
            source,
        })?;
        let store = Self {
            directory,
            save_total_limit,
            fail_after_files: None,
        };
        store.remove_staging()?;
        Ok(store)
    }

    /// Deletes staging directories left by interrupted saves and puts back
    /// any replaced checkpoint whose successor never landed. Returns the
    /// deleted paths.
    pub fn remove_staging(&self) -> Result<Vec<PathBuf>> {
        let io = |path: &Path, source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut removed = Vec::new();
        for entry in fs::read_dir(&self.directory).map_err(|e| io(&self.directory, e))? {
            let entry = entry.map_err(|e| io(&self.directory, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let p = entry.path();
            if name.starts_with(".bundle-") {
                fs::remove_dir_all(&p).map_err(|e| io(&p, e))?;
                removed.push(p);
            } else if let Some((target, _)) = name.strip_prefix('.').and_then(|n| n.split_once(".old-")) {
                // A crash between the two renames of a replacing save leaves
                // the only copy here.
                let target = self.directory.join(target);
                if target.exists() {
                    fs::remove_dir_all(&p).map_err(|e| io(&p, e))?;
                    removed.push(p);
                } else {
                    fs::rename(&p, &target).map_err(|e| io(&p, e))?;
                }
            }
        }
        Ok(removed)
    }

    /// Every `checkpoint-<step>` directory present, ascending by step,
    /// whether or not it is valid.
    pub fn list(&self) -> Result<Vec<(u64, PathBuf)>> {
        list_checkpoint_dirs(&self.directory)
    }

    /// Steps of the retained checkpoints, ascending.
    pub fn retained(&self) -> Result<Vec<u64>> {
        Ok(self.list()?.into_iter().map(|(s, _)| s).collect())
    }

    /// Writes atomically, then rotates. A failed write leaves every existing
    /// checkpoint untouched.
    pub fn save(&self, ckpt: &mut Checkpoint) -> Result<PathBuf> {
        self.remove_staging()?;
        let files = ckpt.files()?;
        let path = self.directory.join(checkpoint_dir_name(ckpt.step));
        write_bundle_files_with(&path, &files, self.fail_after_files)?;
        ckpt.checksum = Checkpoint::listing_checksum(&files);
        self.rotate()?;
        Ok(path)
    }

    pub fn rotate(&self) -> Result<Vec<PathBuf>> {
        let all = self.list()?;
        let excess = all.len().saturating_sub(self.save_total_limit);
        let mut removed = Vec::new();
        for (_, p) in all.into_iter().take(excess) {
            fs::remove_dir_all(&p).map_err(|source| TrainError::Io { path: p.clone(), source })?;
            removed.push(p);
        }
        Ok(removed)
    }

    /// The highest-step checkpoint that loads and verifies, plus every newer
    /// one that was skipped.
    pub fn latest(&self) -> Result<(Option<Checkpoint>, Vec<SkippedCheckpoint>)> {
        latest_checkpoint(&self.directory)
    }
}

pub(crate) fn list_checkpoint_dirs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(TrainError::Io {
                path: dir.to_path_buf(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| TrainError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name();
        if let Some(step) = name.to_str().and_then(parse_step) {
            if entry.path().is_dir() {
                out.push((step, entry.path()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Scans `dir` from the highest step down and returns the first checkpoint
/// that verifies. Invalid ones are logged and reported, never fatal here.
pub fn latest_checkpoint(dir: impl AsRef<Path>) -> Result<(Option<Checkpoint>, Vec<SkippedCheckpoint>)> {
    let mut skipped = Vec::new();
    for (_, path) in list_checkpoint_dirs(dir.as_ref())?.into_iter().rev() {
        match Checkpoint::load(&path) {
            Ok(c) => return Ok((Some(c), skipped)),
            Err(e) => {
                log::warn!("skipping invalid checkpoint {}: {e}", path.display());
                skipped.push(SkippedCheckpoint {
                    path,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((None, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(step: u64) -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("w", Tensor::new(&[2], vec![step as f64, -1.5]).unwrap(), true);
        let sampler = BatchSampler::new(3, 5);
        let (rng, data) = sampler.state();
        Checkpoint {
            step,
            params,
            optimizer_kind: OptimizerKind::adam(),
            optimizer: OptimizerState {
                step,
                m: vec![0.1, 0.2],
                v: vec![0.3, 0.4],
            },
            schedule: ScheduleState {
                kind: Schedule::Constant,
                base_lr: 0.1,
                max_steps: 1000,
                current_lr: 0.1,
            },
            rng,
            data,
            val_loss: Some(1.25),
            checksum: String::new(),
        }
    }

    #[test]
    fn rotation_keeps_highest_steps() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), 3).unwrap();
        for s in (100..=500).step_by(100) {
            store.save(&mut dummy(s)).unwrap();
        }
        assert_eq!(store.retained().unwrap(), vec![300, 400, 500]);
        let one = CheckpointStore::new(dir.path().join("one"), 1).unwrap();
        for s in 1..=4 {
            one.save(&mut dummy(s)).unwrap();
        }
        assert_eq!(one.retained().unwrap(), vec![4]);
        assert!(CheckpointStore::new(dir.path(), 0).is_err());
    }

    #[test]
    fn reopening_restores_an_orphaned_backup() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), 3).unwrap();
        let p = store.save(&mut dummy(5)).unwrap();
        // Crash after moving the old copy aside, before the new one landed.
        let backup = dir.path().join(".checkpoint-00000005.old-42");
        fs::rename(&p, &backup).unwrap();
        assert!(store.retained().unwrap().is_empty());
        let reopened = CheckpointStore::new(dir.path(), 3).unwrap();
        assert_eq!(reopened.retained().unwrap(), vec![5]);
        assert!(!backup.exists());
        assert_eq!(reopened.latest().unwrap().0.unwrap().step, 5);
    }

    #[test]
    fn load_then_save_keeps_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path().join("a"), 3).unwrap();
        let mut c = dummy(7);
        let p = store.save(&mut c).unwrap();
        let mut loaded = Checkpoint::load(&p).unwrap();
        assert_eq!(loaded, c);
        let other = CheckpointStore::new(dir.path().join("b"), 3).unwrap();
        let before = loaded.checksum.clone();
        other.save(&mut loaded).unwrap();
        assert_eq!(loaded.checksum, before);
    }

    #[test]
    fn truncated_latest_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), 3).unwrap();
        assert!(store.latest().unwrap().0.is_none());
        for s in [300, 400, 500] {
            store.save(&mut dummy(s)).unwrap();
        }
        let blob = dir.path().join(checkpoint_dir_name(500)).join("params.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
        let (c, skipped) = store.latest().unwrap();
        assert_eq!(c.unwrap().step, 400);
        assert_eq!(skipped.len(), 1);
        assert!(skipped[0].path.ends_with(checkpoint_dir_name(500)));
    }

    #[test]
    fn injected_failure_preserves_previous_latest() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::new(dir.path(), 3).unwrap();
        store.save(&mut dummy(100)).unwrap();
        store.fail_after_files = Some(1);
        assert!(store.save(&mut dummy(200)).is_err());
        let (c, _) = store.latest().unwrap();
        assert_eq!(c.unwrap().step, 100);
        assert_eq!(store.retained().unwrap(), vec![100]);
        let staged = |d: &Path| fs::read_dir(d).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".bundle-")).count();
        assert_eq!(staged(dir.path()), 1);
        let reopened = CheckpointStore::new(dir.path(), 3).unwrap();
        assert_eq!(staged(dir.path()), 0);
        assert_eq!(reopened.retained().unwrap(), vec![100]);
    }

    #[test]
    fn sampler_state_roundtrip() {
        let mut a = BatchSampler::new(9, 7);
        a.next_batch(5);
        let (rng, data) = a.state();
        let mut b = BatchSampler::restore(&rng, &data, 7).unwrap();
        for _ in 0..6 {
            assert_eq!(a.next_batch(4), b.next_batch(4));
        }
        assert!(BatchSampler::restore(&rng, &data, 8).is_err());
        assert_eq!(parse_step("checkpoint-00000042"), Some(42));
        assert_eq!(parse_step("checkpoint-x"), None);
    }
}
