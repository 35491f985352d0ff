//! A toy next-token model: `k` context embeddings are concatenated, passed
//! through one tanh layer, and projected to vocabulary logits.

use super::instruct::InstructionPair;
use super::{build_prompt, PersonaError, PersonaProfile, Result};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::clean_text;
use crate::models::bundle::{decode_tensor, tensor_blob, FORMAT_VERSION};
use crate::models::{read_bundle_files, write_bundle_files, LoraAdapter, LoraConfig, LoraLayout, ModelError, TensorEntry, MANIFEST_FILE};
use crate::trainer::{train, CheckpointStore, TrainReport, Trainable, TrainerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<unk>", "<bos>", "<eos>"];
const VOCAB_FILE: &str = "vocab.json";

/// Special tokens first, then words by descending frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LmVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl LmVocab {
    /// Keeps the `max_size - 3` most frequent words of the cleaned texts;
    /// ties break alphabetically.
    pub fn build<S: AsRef<str>>(texts: &[S], max_size: usize) -> Result<Self> {
        if max_size < SPECIALS.len() + 1 {
            return Err(PersonaError::Config(format!("vocabulary size {max_size} leaves no room for words")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in clean_text(t.as_ref()).split_whitespace() {
                *counts.entry(w.to_string()).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().take(max_size - SPECIALS.len()).map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(PersonaError::Config("vocabulary must start with <unk>, <bos>, <eos>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(PersonaError::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Cleans `text` and maps each word to its id, `<unk>` when unknown.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        clean_text(text).split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Space-joined words; `<bos>` and `<eos>` are dropped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BOS && i != EOS)
            .map(|&i| self.tokens.get(i).map_or(SPECIALS[UNK], String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for LmVocab {
    type Error = PersonaError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<LmVocab> for Vec<String> {
    fn from(v: LmVocab) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyLmConfig {
    pub max_vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub context: usize,
    pub embed_init_std: f64,
    pub seed: u64,
}

impl Default for TinyLmConfig {
    fn default() -> Self {
        Self {
            max_vocab: 2000,
            embed_dim: 32,
            hidden: 64,
            context: 8,
            embed_init_std: 0.5,
            seed: 0,
        }
    }
}

/// Context windows `[n, k]` (row-major) and their next-token targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LmData {
    pub contexts: Vec<usize>,
    pub targets: Vec<usize>,
    pub k: usize,
}

/// The `k` tokens before `pos` in `seq`, left-padded with `<bos>`.
fn window(seq: &[usize], pos: usize, k: usize) -> Vec<usize> {
    let start = pos.saturating_sub(k);
    let mut ctx = vec![BOS; k - (pos - start)];
    ctx.extend_from_slice(&seq[start..pos]);
    ctx
}

impl LmData {
    fn push_sequence(&mut self, seq: &[usize], from: usize) {
        for pos in from.max(1)..seq.len() {
            self.contexts.extend(window(seq, pos, self.k));
            self.targets.push(seq[pos]);
        }
    }

    /// Every position of `<bos> text <eos>` after `<bos>` is a target.
    pub fn from_texts<S: AsRef<str>>(vocab: &LmVocab, texts: &[S], k: usize) -> Self {
        let mut d = Self {
            contexts: Vec::new(),
            targets: Vec::new(),
            k,
        };
        for t in texts {
            let mut seq = vec![BOS];
            seq.extend(vocab.tokenize(t.as_ref()));
            seq.push(EOS);
            d.push_sequence(&seq, 1);
        }
        d
    }

    /// Sequences are `<bos> prompt response <eos>`; only response tokens and
    /// the closing `<eos>` are targets.
    pub fn from_pairs(vocab: &LmVocab, pairs: &[InstructionPair], k: usize) -> Self {
        let mut d = Self {
            contexts: Vec::new(),
            targets: Vec::new(),
            k,
        };
        for p in pairs {
            let mut seq = vec![BOS];
            seq.extend(vocab.tokenize(&p.prompt));
            let first = seq.len();
            seq.extend(vocab.tokenize(&p.response));
            seq.push(EOS);
            d.push_sequence(&seq, first);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            max_tokens: 32,
            temperature: 0.8,
            top_k: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLm {
    pub config: TinyLmConfig,
    vocab: LmVocab,
    store: ParamStore,
    embedding: ParamId,
    hidden: ParamId,
    output: ParamId,
    adapters: Option<[LoraAdapter; 2]>,
}

impl TinyLm {
    /// Embedding `[V, d]` and hidden `[k·d, h]` are drawn from seeded
    /// normals; the output projection `[h, V]` starts at zero.
    pub fn new(vocab: LmVocab, config: TinyLmConfig) -> Result<Self> {
        let v = vocab.len();
        let (d, h, k) = (config.embed_dim, config.hidden, config.context);
        if v > config.max_vocab {
            return Err(PersonaError::Config(format!("vocabulary of {v} exceeds max_vocab {}", config.max_vocab)));
        }
        if d == 0 || h == 0 || k == 0 {
            return Err(PersonaError::Config("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut normal = |n: usize, std: f64| -> Vec<f64> { (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect() };
        let emb = Tensor::new(&[v, d], normal(v * d, config.embed_init_std))?;
        let hid = Tensor::new(&[k * d, h], normal(k * d * h, 1.0 / ((k * d) as f64).sqrt()))?;
        let out = Tensor::zeros(&[h, v]);
        Self::from_tensors(vocab, config, emb, hid, out)
    }

    fn from_tensors(vocab: LmVocab, config: TinyLmConfig, emb: Tensor, hid: Tensor, out: Tensor) -> Result<Self> {
        let v = vocab.len();
        let (d, h, k) = (config.embed_dim, config.hidden, config.context);
        if emb.shape() != [v, d] || hid.shape() != [k * d, h] || out.shape() != [h, v] {
            return Err(PersonaError::Config("tensor shapes do not match the configuration".into()));
        }
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", emb, true);
        let hidden = store.add("hidden", hid, true);
        let output = store.add("output", out, true);
        Ok(Self {
            config,
            vocab,
            store,
            embedding,
            hidden,
            output,
            adapters: None,
        })
    }

    pub fn vocab(&self) -> &LmVocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn adapters(&self) -> Option<&[LoraAdapter; 2]> {
        self.adapters.as_ref()
    }

    /// Parameters of the embedding, hidden and output matrices.
    pub fn base_param_count(&self) -> usize {
        [self.embedding, self.hidden, self.output]
            .iter()
            .map(|&id| self.store.tensor(id).numel())
            .sum()
    }

    /// Freezes every base tensor and attaches adapters to the hidden and
    /// output projections.
    pub fn attach_lora(&mut self, cfg: &LoraConfig) -> Result<()> {
        if self.adapters.is_some() {
            return Err(PersonaError::Config("model already carries LoRA adapters".into()));
        }
        self.store.freeze_all();
        let hidden = LoraAdapter::attach(&mut self.store, self.hidden, LoraLayout::InOut, cfg)?;
        let out_cfg = LoraConfig {
            seed: cfg.seed.wrapping_add(1),
            ..cfg.clone()
        };
        let output = LoraAdapter::attach(&mut self.store, self.output, LoraLayout::InOut, &out_cfg)?;
        self.adapters = Some([hidden, output]);
        Ok(())
    }

    /// Folds any adapters into the base matrices, giving a plain model.
    pub fn merged(&self) -> Result<Self> {
        let (hid, out) = match &self.adapters {
            Some([h, o]) => (h.merge(&self.store)?, o.merge(&self.store)?),
            None => (self.store.tensor(self.hidden).clone(), self.store.tensor(self.output).clone()),
        };
        Self::from_tensors(self.vocab.clone(), self.config.clone(), self.store.tensor(self.embedding).clone(), hid, out)
    }

    fn project(&self, tape: &mut Tape, x: Var, base: ParamId, adapter: usize) -> Result<Var> {
        Ok(match &self.adapters {
            Some(a) => a[adapter].forward(tape, &self.store, x)?,
            None => {
                let w = tape.param(&self.store, base);
                tape.matmul(x, w).map_err(ModelError::from)?
            }
        })
    }

    /// Logits `[n, V]` for `n` row-major context windows of length `k`.
    pub fn forward(&self, tape: &mut Tape, contexts: &[usize]) -> Result<Var> {
        let k = self.config.context;
        if contexts.is_empty() || contexts.len() % k != 0 {
            return Err(PersonaError::Config(format!("{} context ids are not windows of {k}", contexts.len())));
        }
        let n = contexts.len() / k;
        let table = tape.param(&self.store, self.embedding);
        let e = tape.embedding(table, contexts)?;
        let x = tape.reshape(e, &[n, k * self.config.embed_dim])?;
        let z = self.project(tape, x, self.hidden, 0)?;
        let h = tape.tanh(z);
        self.project(tape, h, self.output, 1)
    }

    /// Next-token logits for one window of exactly `k` ids.
    pub fn lm_step(&self, context: &[usize]) -> Result<Vec<f64>> {
        if context.len() != self.config.context {
            return Err(PersonaError::Config(format!(
                "context has {} ids, expected {}",
                context.len(),
                self.config.context
            )));
        }
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, context)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Sampled continuation ids of `build_prompt(profile) + " " + message`,
    /// excluding the terminating `<eos>`. `<unk>` and `<bos>` are never
    /// sampled and `<eos>` cannot be the first token.
    pub fn generate_ids(&self, profile: &PersonaProfile, message: &str, cfg: &GenerateConfig) -> Result<Vec<usize>> {
        if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) || cfg.top_k == 0 {
            return Err(PersonaError::Config("generation needs temperature > 0 and top_k >= 1".into()));
        }
        let k = self.config.context;
        let mut seq = vec![BOS];
        seq.extend(self.vocab.tokenize(&format!("{} {message}", build_prompt(profile))));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::new();
        for step in 0..cfg.max_tokens {
            let logits = self.lm_step(&window(&seq, seq.len(), k))?;
            let mut cand: Vec<usize> = (0..logits.len())
                .filter(|&i| i != UNK && i != BOS && !(step == 0 && i == EOS))
                .collect();
            if cand.is_empty() {
                break;
            }
            cand.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
            cand.truncate(cfg.top_k);
            let next = if cand.len() == 1 {
                cand[0]
            } else {
                let top = logits[cand[0]];
                let w: Vec<f64> = cand.iter().map(|&i| ((logits[i] - top) / cfg.temperature).exp()).collect();
                let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
                let mut pick = cand[cand.len() - 1];
                for (&i, &wi) in cand.iter().zip(&w) {
                    if u < wi {
                        pick = i;
                        break;
                    }
                    u -= wi;
                }
                pick
            };
            if next == EOS {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }

    pub fn generate(&self, profile: &PersonaProfile, message: &str, cfg: &GenerateConfig) -> Result<String> {
        Ok(self.vocab.detokenize(&self.generate_ids(profile, message, cfg)?))
    }
}

impl Trainable for TinyLm {
    type Data = LmData;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn example_count(&self, data: &LmData) -> usize {
        data.len()
    }

    fn loss(&self, tape: &mut Tape, data: &LmData, batch: &[usize]) -> crate::models::Result<Var> {
        let k = data.k;
        let mut ctx = Vec::with_capacity(batch.len() * k);
        let mut targets = Vec::with_capacity(batch.len());
        for &i in batch {
            if i >= data.len() {
                return Err(ModelError::Shape(format!("example {i} out of {}", data.len())));
            }
            ctx.extend_from_slice(&data.contexts[i * k..(i + 1) * k]);
            targets.push(data.targets[i]);
        }
        let logits = self.forward(tape, &ctx).map_err(|e| match e {
            PersonaError::Model(m) => m,
            PersonaError::Autodiff(a) => ModelError::Autodiff(a),
            other => ModelError::Shape(other.to_string()),
        })?;
        Ok(tape.cross_entropy(logits, &targets)?)
    }
}

/// Trains every parameter of `model` on plain texts.
pub fn train_base<S: AsRef<str>>(
    model: &mut TinyLm,
    texts: &[S],
    config: &TrainerConfig,
    store: Option<&CheckpointStore>,
) -> Result<TrainReport> {
    let data = LmData::from_texts(&model.vocab, texts, model.config.context);
    if data.is_empty() {
        return Err(PersonaError::EmptyCorpus);
    }
    Ok(train(config, model, &data, None, store)?)
}

/// Copies `base`, attaches rank-`lora.rank` adapters to its hidden and
/// output matrices, and trains only the adapters on the response tokens of
/// `pairs`.
pub fn finetune_lora(
    base: &TinyLm,
    pairs: &[InstructionPair],
    val: Option<&[InstructionPair]>,
    lora: &LoraConfig,
    config: &TrainerConfig,
    store: Option<&CheckpointStore>,
) -> Result<(TinyLm, TrainReport)> {
    let k = base.config.context;
    let data = LmData::from_pairs(&base.vocab, pairs, k);
    if pairs.is_empty() || data.is_empty() {
        return Err(PersonaError::EmptyCorpus);
    }
    let val_data = val.map(|v| LmData::from_pairs(&base.vocab, v, k)).filter(|d| !d.is_empty());
    let mut model = base.clone();
    model.attach_lora(lora)?;
    let report = train(config, &mut model, &data, val_data.as_ref(), store)?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmBundleManifest {
    pub format_version: u32,
    pub kind: String,
    pub name: String,
    pub config: TinyLmConfig,
    pub vocab_size: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Writes a self-checking bundle; adapters are merged into the base first.
pub fn save_lm_bundle(dir: impl AsRef<Path>, name: &str, model: &TinyLm, quantize: bool) -> Result<()> {
    let plain = model.merged()?;
    let mut files = Vec::new();
    let mut tensors = Vec::new();
    for (_, p) in plain.store.iter() {
        let (entry, bytes) = tensor_blob(&p.name, &p.tensor, quantize)?;
        files.push((entry.file.clone(), bytes));
        tensors.push(entry);
    }
    let manifest = LmBundleManifest {
        format_version: FORMAT_VERSION,
        kind: "tiny_lm".into(),
        name: name.into(),
        config: plain.config.clone(),
        vocab_size: plain.vocab_size(),
        tensors,
    };
    files.push((MANIFEST_FILE.into(), serde_json::to_vec_pretty(&manifest)?));
    files.push((VOCAB_FILE.into(), serde_json::to_vec(&plain.vocab)?));
    Ok(write_bundle_files(dir, &files)?)
}

pub fn load_lm_bundle(dir: impl AsRef<Path>) -> Result<(LmBundleManifest, TinyLm)> {
    let files = read_bundle_files(&dir)?;
    let get = |n: &str| {
        files
            .get(n)
            .ok_or_else(|| PersonaError::Model(ModelError::Format(format!("bundle lacks {n}"))))
    };
    let manifest: LmBundleManifest = serde_json::from_slice(get(MANIFEST_FILE)?)?;
    if manifest.kind != "tiny_lm" || manifest.format_version != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "expected a version {FORMAT_VERSION} tiny_lm bundle, found {} v{}",
            manifest.kind, manifest.format_version
        ))
        .into());
    }
    let vocab: LmVocab = serde_json::from_slice(get(VOCAB_FILE)?)?;
    if vocab.len() != manifest.vocab_size {
        return Err(ModelError::Format("vocabulary size disagrees with the manifest".into()).into());
    }
    let tensor = |name: &str| -> Result<Tensor> {
        let entry = manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ModelError::Format(format!("bundle lacks tensor {name}")))?;
        Ok(decode_tensor(entry, &files)?)
    };
    let model = TinyLm::from_tensors(vocab, manifest.config.clone(), tensor("embedding")?, tensor("hidden")?, tensor("output")?)?;
    Ok((manifest, model))
}
