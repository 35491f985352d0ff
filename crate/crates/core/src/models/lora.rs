//! Low-rank adapters over a frozen base matrix.
//!
//! The adapter adds `(alpha / r) · B · A` to the base weight, with
//! `A: [r, d_in]` drawn from a small normal and `B: [d_out, r]` zero, so the
//! adapted layer starts out identical to the base layer.

use super::{ModelError, Result};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// How the base matrix is stored. `OutIn` is `[d_out, d_in]` and computes
/// `x · Wᵀ`; `InOut` is `[d_in, d_out]` and computes `x · W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraLayout {
    OutIn,
    InOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 8.0,
            init_std: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub base: ParamId,
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub alpha: f64,
    pub layout: LoraLayout,
    pub d_in: usize,
    pub d_out: usize,
}

impl LoraAdapter {
    /// Freezes `base` and registers the adapter pair next to it.
    pub fn attach(store: &mut ParamStore, base: ParamId, layout: LoraLayout, cfg: &LoraConfig) -> Result<Self> {
        if cfg.rank == 0 {
            return Err(ModelError::Shape("LoRA rank must be positive".into()));
        }
        let (r0, c0) = store.tensor(base).dims2()?;
        let (d_out, d_in) = match layout {
            LoraLayout::OutIn => (r0, c0),
            LoraLayout::InOut => (c0, r0),
        };
        let r = cfg.rank;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let a_init: Vec<f64> = (0..r * d_in).map(|_| cfg.init_std * rng.sample::<f64, _>(StandardNormal)).collect();
        store.set_trainable(base, false);
        let name = store.get(base).name.clone();
        let a = store.add(format!("{name}.lora_a"), Tensor::new(&[r, d_in], a_init)?, true);
        let b = store.add(format!("{name}.lora_b"), Tensor::zeros(&[d_out, r]), true);
        Ok(Self {
            base,
            a,
            b,
            rank: r,
            alpha: cfg.alpha,
            layout,
            d_in,
            d_out,
        })
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn trainable_count(&self) -> usize {
        self.rank * (self.d_in + self.d_out)
    }

    /// Applies the adapted layer to row inputs `x: [n, d_in]`, giving `[n, d_out]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, width) = tape.value(x).dims2()?;
        if width != self.d_in {
            return Err(ModelError::Shape(format!("LoRA expects input width {}, got {width}", self.d_in)));
        }
        let w = tape.param(store, self.base);
        let base = match self.layout {
            LoraLayout::InOut => tape.matmul(x, w)?,
            LoraLayout::OutIn => {
                let wt = tape.transpose(w)?;
                tape.matmul(x, wt)?
            }
        };
        let a = tape.param(store, self.a);
        let b = tape.param(store, self.b);
        let at = tape.transpose(a)?;
        let bt = tape.transpose(b)?;
        let xa = tape.matmul(x, at)?;
        let delta = tape.matmul(xa, bt)?;
        let delta = tape.scale(delta, self.scaling());
        Ok(tape.add(base, delta)?)
    }

    /// `base + (alpha / r) · B · A`, in the base matrix's layout.
    pub fn merge(&self, store: &ParamStore) -> Result<Tensor> {
        let ba = store.tensor(self.b).matmul(store.tensor(self.a))?.scale(self.scaling());
        let delta = match self.layout {
            LoraLayout::OutIn => ba,
            LoraLayout::InOut => ba.transpose()?,
        };
        Ok(store.tensor(self.base).add(&delta)?)
    }
}
