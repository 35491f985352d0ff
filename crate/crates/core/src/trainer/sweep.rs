use super::checkpoint::{list_checkpoint_dirs, Checkpoint};
use super::{evaluate, Result, TrainError, Trainable};
use crate::par;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub best_step: u64,
    pub best_loss: f64,
    /// Every evaluated checkpoint, ascending by step.
    pub losses: Vec<(u64, f64)>,
    pub skipped: Vec<String>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,val_loss\n");
        for (step, loss) in &self.losses {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

/// Global minimum of a loss curve; ties go to the earliest step and
/// non-finite losses never win.
pub fn select_best(losses: &[(u64, f64)]) -> Option<(u64, f64)> {
    let mut sorted: Vec<(u64, f64)> = losses.iter().copied().filter(|(_, l)| !l.is_nan()).collect();
    sorted.sort_by_key(|(s, _)| *s);
    sorted.into_iter().fold(None, |best, (s, l)| match best {
        Some((_, bl)) if l >= bl => best,
        _ => Some((s, l)),
    })
}

/// Evaluates every valid checkpoint under `dir` on `val` (in parallel) and
/// returns the global minimum. `template` supplies the architecture; its
/// parameters are replaced by each checkpoint's.
pub fn sweep_checkpoints<M: Trainable>(dir: impl AsRef<Path>, template: &M, val: &M::Data) -> Result<SweepReport> {
    let dir = dir.as_ref();
    let entries = list_checkpoint_dirs(dir)?;
    let results = par::map_slice(&entries, |(step, path)| -> std::result::Result<(u64, f64), String> {
        let ckpt = Checkpoint::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if ckpt.params.len() != template.params().len()
            || ckpt
                .params
                .iter()
                .zip(template.params().iter())
                .any(|((_, a), (_, b))| a.name != b.name || a.tensor.shape() != b.tensor.shape())
        {
            return Err(format!("{}: parameter layout differs from the model", path.display()));
        }
        let mut m = template.clone();
        *m.params_mut() = ckpt.params;
        let loss = evaluate(&m, val).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok((*step, loss))
    });
    let mut losses = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(v) => losses.push(v),
            Err(e) => {
                log::warn!("sweep skipped {e}");
                skipped.push(e);
            }
        }
    }
    let (best_step, best_loss) = select_best(&losses).ok_or_else(|| TrainError::NoCheckpoints(dir.to_path_buf()))?;
    Ok(SweepReport {
        best_step,
        best_loss,
        losses,
        skipped,
    })
}
