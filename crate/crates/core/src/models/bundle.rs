//! On-disk model bundles: a directory of named files plus a checksum list.
//!
//! Every bundle carries `checksum.sha256` with one `<hex>  <file>` line per
//! file. Bundles are written into a temporary sibling directory and renamed
//! into place, and readers verify every listed file before use.

use super::heads::HeadKind;
use super::quant::{quantize_weights, QuantizedLinear, DEFAULT_BLOCK_SIZE};
use super::regressor::{Regressor, RegressorConfig};
use super::scaler::TargetScaler;
use super::{io_err, ModelError, Result};
use crate::autodiff::Tensor;
use crate::corpus::clean_text;
use crate::features::TfIdfModel;
use crate::trainer::Trainable;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const CHECKSUM_FILE: &str = "checksum.sha256";
pub const MANIFEST_FILE: &str = "manifest.json";
const TFIDF_FILE: &str = "tfidf.json";
pub(crate) const FORMAT_VERSION: u32 = 1;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `files` plus a checksum list to `dir`, replacing any previous
/// bundle there only once the new one is complete.
pub fn write_bundle_files(dir: impl AsRef<Path>, files: &[(String, Vec<u8>)]) -> Result<()> {
    write_bundle_files_with(dir.as_ref(), files, None)
}

/// Test hook: with `fail_after = Some(k)` the write stops after `k` files,
/// leaves the partial staging directory behind as a crash would, and errors.
pub(crate) fn write_bundle_files_with(dir: &Path, files: &[(String, Vec<u8>)], fail_after: Option<usize>) -> Result<()> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let tmp = tempfile::Builder::new()
        .prefix(".bundle-")
        .tempdir_in(&parent)
        .map_err(io_err(&parent))?;
    let mut listing = String::new();
    for (k, (name, bytes)) in files.iter().enumerate() {
        if fail_after == Some(k) {
            let kept = tmp.keep();
            return Err(ModelError::Io {
                path: kept,
                source: std::io::Error::other("injected write failure"),
            });
        }
        if name.contains('/') || name.contains('\\') || name == CHECKSUM_FILE {
            return Err(ModelError::Format(format!("invalid bundle file name {name:?}")));
        }
        let p = tmp.path().join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
        listing.push_str(&format!("{}  {name}\n", sha256_hex(bytes)));
    }
    let p = tmp.path().join(CHECKSUM_FILE);
    fs::write(&p, listing).map_err(io_err(&p))?;

    let staged = tmp.keep();
    let backup = parent.join(format!(
        ".{}.old-{}",
        dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    let had_previous = dir.exists();
    if had_previous {
        fs::rename(dir, &backup).map_err(io_err(dir))?;
    }
    if let Err(e) = fs::rename(&staged, dir) {
        if had_previous {
            let _ = fs::rename(&backup, dir);
        }
        let _ = fs::remove_dir_all(&staged);
        return Err(io_err(dir)(e));
    }
    if had_previous {
        fs::remove_dir_all(&backup).map_err(io_err(&backup))?;
    }
    Ok(())
}

/// Reads and verifies every file listed in the bundle's checksum file.
pub fn read_bundle_files(dir: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<u8>>> {
    let dir = dir.as_ref();
    let sum_path = dir.join(CHECKSUM_FILE);
    let listing = fs::read_to_string(&sum_path).map_err(io_err(&sum_path))?;
    let mut out = BTreeMap::new();
    for line in listing.lines().filter(|l| !l.trim().is_empty()) {
        let (digest, name) = line
            .split_once("  ")
            .ok_or_else(|| ModelError::Format(format!("bad checksum line {line:?}")))?;
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        if sha256_hex(&bytes) != digest {
            return Err(ModelError::Checksum(p));
        }
        out.insert(name.to_string(), bytes);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    /// `"f64"` for raw little-endian values, `"q4"` for packed 4-bit codes.
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub kind: String,
    pub name: String,
    pub target_names: Vec<String>,
    pub input_dim: usize,
    pub hidden: usize,
    pub n_targets: usize,
    pub head: HeadKind,
    pub normalize_targets: bool,
    pub scaler: Option<TargetScaler>,
    pub tensors: Vec<TensorEntry>,
}

pub(crate) fn tensor_blob(name: &str, t: &Tensor, quantize: bool) -> Result<(TensorEntry, Vec<u8>)> {
    let file = format!("{name}.bin");
    if quantize {
        let q = quantize_weights(t, DEFAULT_BLOCK_SIZE)?;
        let entry = TensorEntry {
            name: name.into(),
            shape: t.shape().to_vec(),
            file,
            dtype: "q4".into(),
            block_size: Some(DEFAULT_BLOCK_SIZE),
        };
        return Ok((entry, q.to_bytes()));
    }
    let entry = TensorEntry {
        name: name.into(),
        shape: t.shape().to_vec(),
        file,
        dtype: "f64".into(),
        block_size: None,
    };
    Ok((entry, t.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
}

pub(crate) fn decode_tensor(entry: &TensorEntry, files: &BTreeMap<String, Vec<u8>>) -> Result<Tensor> {
    let bytes = files
        .get(&entry.file)
        .ok_or_else(|| ModelError::Format(format!("missing tensor file {}", entry.file)))?;
    match entry.dtype.as_str() {
        "f64" => {
            let numel: usize = entry.shape.iter().product();
            if bytes.len() != numel * 8 {
                return Err(ModelError::Format(format!("{} has {} bytes, expected {}", entry.file, bytes.len(), numel * 8)));
            }
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(Tensor::new(&entry.shape, data)?)
        }
        "q4" => {
            let block = entry.block_size.unwrap_or(DEFAULT_BLOCK_SIZE);
            Ok(QuantizedLinear::from_bytes(&entry.shape, block, bytes)?.dequantize())
        }
        other => Err(ModelError::Format(format!("unknown tensor dtype {other:?}"))),
    }
}

/// A loaded predictor: featurizer plus regressor and its metadata.
#[derive(Debug, Clone)]
pub struct RegressorBundle {
    pub manifest: BundleManifest,
    pub tfidf: TfIdfModel,
    pub model: Regressor,
}

impl RegressorBundle {
    /// Cleans and featurizes `text`, then predicts on the original scale.
    /// Text with no known tokens maps to the zero feature vector.
    pub fn predict_text(&self, text: &str) -> Result<Vec<f64>> {
        let x = self.tfidf.transform(&clean_text(text)).to_dense(self.tfidf.dim());
        self.model.predict(&x)
    }

    pub fn predict_scores(&self, text: &str) -> Result<BTreeMap<String, f64>> {
        let p = self.predict_text(text)?;
        Ok(self.manifest.target_names.iter().cloned().zip(p).collect())
    }
}

pub fn save_regressor_bundle(
    dir: impl AsRef<Path>,
    name: &str,
    model: &Regressor,
    tfidf: &TfIdfModel,
    target_names: &[String],
    quantize: bool,
) -> Result<()> {
    if target_names.len() != model.n_targets() || tfidf.dim() != model.input_dim() {
        return Err(ModelError::Shape("bundle metadata does not match the model".into()));
    }
    let mut files = Vec::new();
    let mut tensors = Vec::new();
    for (_, p) in model.params().iter() {
        // Vectors stay exact; only matrices are quantized.
        let q = quantize && p.tensor.shape().len() == 2;
        let (entry, bytes) = tensor_blob(&p.name, &p.tensor, q)?;
        files.push((entry.file.clone(), bytes));
        tensors.push(entry);
    }
    let manifest = BundleManifest {
        format_version: FORMAT_VERSION,
        kind: "regressor".into(),
        name: name.into(),
        target_names: target_names.to_vec(),
        input_dim: model.input_dim(),
        hidden: model.config.hidden,
        n_targets: model.n_targets(),
        head: model.config.head,
        normalize_targets: model.config.normalize_targets,
        scaler: model.scaler().cloned(),
        tensors,
    };
    files.push((MANIFEST_FILE.into(), serde_json::to_vec_pretty(&manifest)?));
    files.push((TFIDF_FILE.into(), tfidf.to_json()?.into_bytes()));
    write_bundle_files(dir, &files)
}

pub fn load_regressor_bundle(dir: impl AsRef<Path>) -> Result<RegressorBundle> {
    let files = read_bundle_files(&dir)?;
    let get = |n: &str| files.get(n).ok_or_else(|| ModelError::Format(format!("bundle lacks {n}")));
    let manifest: BundleManifest = serde_json::from_slice(get(MANIFEST_FILE)?)?;
    if manifest.kind != "regressor" || manifest.format_version != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "expected a version {FORMAT_VERSION} regressor bundle, found {} v{}",
            manifest.kind, manifest.format_version
        )));
    }
    let tfidf = TfIdfModel::from_json(std::str::from_utf8(get(TFIDF_FILE)?).map_err(|e| ModelError::Format(e.to_string()))?)?;
    let config = RegressorConfig {
        hidden: manifest.hidden,
        head: manifest.head,
        normalize_targets: manifest.normalize_targets,
        ..Default::default()
    };
    let mut model = Regressor::new(manifest.input_dim, manifest.n_targets, config)?;
    model.set_scaler(manifest.scaler.clone())?;
    if tfidf.dim() != manifest.input_dim || manifest.target_names.len() != manifest.n_targets {
        return Err(ModelError::Format("manifest dimensions disagree with featurizer".into()));
    }
    for entry in &manifest.tensors {
        let id = model
            .params()
            .find(&entry.name)
            .ok_or_else(|| ModelError::Format(format!("unknown tensor {}", entry.name)))?;
        let t = decode_tensor(entry, &files)?;
        if t.shape() != model.params().tensor(id).shape() {
            return Err(ModelError::Format(format!("tensor {} has shape {:?}", entry.name, t.shape())));
        }
        model.params_mut().get_mut(id).tensor = t;
    }
    Ok(RegressorBundle { manifest, tfidf, model })
}
