//! TF-IDF vocabulary fitting and sparse featurization.
//!
//! Tokens are whitespace-separated words of already-cleaned text. The idf is
//! the smoothed `ln((1 + N) / (1 + df)) + 1`, and transformed vectors are
//! l2-normalized.

use crate::par;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit on an empty document set")]
    NoDocuments,
    #[error("no token reaches min_df = {min_df}")]
    EmptyVocabulary { min_df: usize },
    #[error("serialized model is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const DEFAULT_MAX_FEATURES: usize = 5000;
pub const DEFAULT_MIN_DF: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn document_frequency(&self) -> &[usize] {
        &self.document_frequency
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }
}

/// Sparse row with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * dense[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    pub vocabulary: Vocabulary,
    pub idf: Vec<f64>,
    pub max_features: usize,
    pub min_df: usize,
}

pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Fits the vocabulary: the `max_features` tokens with the highest total
/// count among those with `df >= min_df`, ties broken lexicographically.
/// Selected tokens receive ids in lexicographic order.
pub fn fit_tfidf<S: AsRef<str>>(docs: &[S], max_features: usize, min_df: usize) -> Result<TfIdfModel, FeatureError> {
    if docs.is_empty() {
        return Err(FeatureError::NoDocuments);
    }
    // token -> (term count, document frequency)
    let mut stats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.as_ref().split_whitespace().collect();
        for t in &seen {
            stats.entry(t).or_default().0 += 1;
        }
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            stats.get_mut(t).unwrap().1 += 1;
        }
    }
    let mut eligible: Vec<(&str, usize, usize)> = stats
        .into_iter()
        .filter(|(_, (_, df))| *df >= min_df)
        .map(|(t, (tf, df))| (t, tf, df))
        .collect();
    eligible.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    eligible.truncate(max_features);
    if eligible.is_empty() {
        return Err(FeatureError::EmptyVocabulary { min_df });
    }
    eligible.sort_by(|a, b| a.0.cmp(b.0));

    let n_docs = docs.len();
    let tokens: Vec<String> = eligible.iter().map(|e| e.0.to_string()).collect();
    let document_frequency: Vec<usize> = eligible.iter().map(|e| e.2).collect();
    let idf = document_frequency.iter().map(|&df| smoothed_idf(n_docs, df)).collect();
    let token_to_id = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(TfIdfModel {
        vocabulary: Vocabulary {
            token_to_id,
            tokens,
            document_frequency,
            n_docs,
        },
        idf,
        max_features,
        min_df,
    })
}

#[derive(Serialize, Deserialize)]
struct TfIdfJson {
    tokens: Vec<String>,
    idf: Vec<f64>,
    document_frequency: Vec<usize>,
    n_docs: usize,
    max_features: usize,
    min_df: usize,
}

impl TfIdfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn transform(&self, doc: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for tok in doc.split_whitespace() {
            if let Some(id) = self.vocabulary.id(tok) {
                *counts.entry(id).or_default() += 1;
            }
        }
        let mut v = SparseVector {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(&i, &c)| c as f64 * self.idf[i]).collect(),
        };
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn transform_batch<S: AsRef<str> + Sync>(&self, docs: &[S]) -> Vec<SparseVector> {
        par::map_slice(docs, |d| self.transform(d.as_ref()))
    }

    /// Dense `[docs.len() x dim]` row-major matrix.
    pub fn transform_dense<S: AsRef<str> + Sync>(&self, docs: &[S]) -> Vec<f64> {
        let dim = self.dim();
        let rows = self.transform_batch(docs);
        let mut out = vec![0.0; docs.len() * dim];
        for (r, row) in rows.iter().enumerate() {
            for (&i, &v) in row.indices.iter().zip(&row.values) {
                out[r * dim + i] = v;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String, FeatureError> {
        Ok(serde_json::to_string(&TfIdfJson {
            tokens: self.vocabulary.tokens.clone(),
            idf: self.idf.clone(),
            document_frequency: self.vocabulary.document_frequency.clone(),
            n_docs: self.vocabulary.n_docs,
            max_features: self.max_features,
            min_df: self.min_df,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        let j: TfIdfJson = serde_json::from_str(s)?;
        if j.tokens.len() != j.idf.len() || j.tokens.len() != j.document_frequency.len() {
            return Err(FeatureError::Inconsistent("array lengths differ".into()));
        }
        let token_to_id: HashMap<String, usize> = j.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if token_to_id.len() != j.tokens.len() {
            return Err(FeatureError::Inconsistent("duplicate tokens".into()));
        }
        Ok(Self {
            vocabulary: Vocabulary {
                token_to_id,
                tokens: j.tokens,
                document_frequency: j.document_frequency,
                n_docs: j.n_docs,
            },
            idf: j.idf,
            max_features: j.max_features,
            min_df: j.min_df,
        })
    }
}
