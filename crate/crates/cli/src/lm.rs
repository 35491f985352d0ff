//! Persona LM: base training on responses, LoRA fine-tuning on
//! (persona prompt, response) pairs, and bundle export.

use anyhow::{bail, Result};
use psykit_core::models::{perplexity, LoraConfig};
use psykit_core::persona::{
    build_instruction_pairs, finetune_lora, save_lm_bundle, train_base, InstructionRecord, LmData, LmVocab, TinyLm,
    TinyLmConfig, TraitThresholds,
};
use psykit_core::trainer::{evaluate, TrainerConfig};
use serde::Serialize;
use std::path::Path;

pub struct LmArgs {
    pub name: String,
    pub base_steps: u64,
    pub base_lr: f64,
    pub lora_steps: u64,
    pub lora_lr: f64,
    pub lora: LoraConfig,
    pub model: TinyLmConfig,
    /// Fraction of records held out for validation perplexity.
    pub val_fraction: f64,
    pub quantize: bool,
}

impl Default for LmArgs {
    fn default() -> Self {
        Self {
            name: "persona-lm".into(),
            base_steps: 300,
            base_lr: 0.5,
            lora_steps: 500,
            lora_lr: 0.1,
            lora: LoraConfig::default(),
            model: TinyLmConfig::default(),
            val_fraction: 0.2,
            quantize: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LmOutcome {
    pub thresholds: TraitThresholds,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub vocab_size: usize,
    pub trainable_params: usize,
    pub total_params: usize,
    pub base_val_perplexity: f64,
    pub tuned_val_perplexity: f64,
}

/// Thresholds come from the training records only.
pub fn train_lm(records: &[InstructionRecord], args: &LmArgs, out: &Path) -> Result<LmOutcome> {
    if !(args.val_fraction > 0.0 && args.val_fraction < 1.0) {
        bail!("validation fraction must be in (0, 1)");
    }
    let n_val = ((records.len() as f64) * args.val_fraction).round() as usize;
    if records.len() < 4 || n_val == 0 || n_val >= records.len() {
        bail!("need at least 4 records with a non-empty validation split");
    }
    let (train_recs, val_recs) = records.split_at(records.len() - n_val);
    let (thresholds, train) = build_instruction_pairs(train_recs, None)?;
    let (_, val) = build_instruction_pairs(val_recs, Some(&thresholds))?;

    let mut vocab_src: Vec<&str> = train.iter().map(|p| p.response.as_str()).collect();
    vocab_src.extend(train.iter().map(|p| p.prompt.as_str()));
    let vocab = LmVocab::build(&vocab_src, args.model.max_vocab)?;
    let mut base = TinyLm::new(vocab, args.model.clone())?;
    let responses: Vec<&str> = train.iter().map(|p| p.response.as_str()).collect();
    let base_cfg = TrainerConfig {
        max_steps: args.base_steps,
        learning_rate: args.base_lr,
        save_steps: args.base_steps,
        eval_steps: 0,
        seed: args.model.seed,
        ..Default::default()
    };
    train_base(&mut base, &responses, &base_cfg, None)?;

    let val_data = LmData::from_pairs(base.vocab(), &val, base.config.context);
    let base_loss = evaluate(&base, &val_data)?;
    let lora_cfg = TrainerConfig {
        max_steps: args.lora_steps,
        learning_rate: args.lora_lr,
        save_steps: args.lora_steps,
        eval_steps: 0,
        seed: args.model.seed,
        ..Default::default()
    };
    let (tuned, _) = finetune_lora(&base, &train, Some(&val), &args.lora, &lora_cfg, None)?;
    let tuned_loss = evaluate(&tuned, &val_data)?;

    save_lm_bundle(out, &args.name, &tuned, args.quantize)?;
    let params = psykit_core::trainer::Trainable::params(&tuned);
    Ok(LmOutcome {
        thresholds,
        train_pairs: train.len(),
        val_pairs: val.len(),
        vocab_size: tuned.vocab_size(),
        trainable_params: params.count(true),
        total_params: params.count(true) + params.count(false),
        base_val_perplexity: perplexity(base_loss),
        tuned_val_perplexity: perplexity(tuned_loss),
    })
}
