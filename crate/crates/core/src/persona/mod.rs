//! Percentile bucketing of Big Five scores, the persona prompt, and a toy
//! next-token language model with LoRA fine-tuning and sampling.

mod instruct;
mod lm;

pub use instruct::{
    build_instruction_pairs, read_instruction_jsonl, synthetic_instruction_records, write_instruction_jsonl,
    InstructionPair, InstructionRecord,
};
pub use lm::{
    finetune_lora, load_lm_bundle, save_lm_bundle, train_base, GenerateConfig, LmBundleManifest, LmData, LmVocab, TinyLm,
    TinyLmConfig, BOS, EOS, UNK,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("trait {0} has no scores")]
    EmptyTrait(Trait),
    #[error("trait {trait_name} needs at least 3 scores, got {n}")]
    TooFewScores { trait_name: Trait, n: usize },
    #[error("trait {0} has a non-finite score")]
    NonFinite(Trait),
    #[error("expected {expected} score columns, got {got}")]
    TraitCount { expected: usize, got: usize },
    #[error("unknown trait {0:?}")]
    UnknownTrait(String),
    #[error("missing trait {0}")]
    MissingTrait(Trait),
    #[error("invalid level {value:?} for {trait_name}; valid levels are High, Medium, Low")]
    InvalidLevel { trait_name: String, value: String },
    #[error("{0}")]
    Config(String),
    #[error("empty instruction corpus")]
    EmptyCorpus,
    #[error("line {line}: {reason}")]
    Corpus { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PersonaError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
}

impl Trait {
    /// Prompt order.
    pub const ALL: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "Openness",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Neuroticism => "Neuroticism",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trait {
    type Err = PersonaError;

    fn from_str(s: &str) -> Result<Self> {
        Trait::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PersonaError::UnknownTrait(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::High, Level::Medium, Level::Low];

    pub fn name(self) -> &'static str {
        match self {
            Level::Low => "Low",
            Level::Medium => "Medium",
            Level::High => "High",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Level::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| s.to_string())
    }
}

/// One level per trait, serialized as `{"Openness": "High", ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct PersonaProfile {
    pub levels: [Level; 5],
}

impl PersonaProfile {
    pub fn new(levels: [Level; 5]) -> Self {
        Self { levels }
    }

    pub fn uniform(level: Level) -> Self {
        Self { levels: [level; 5] }
    }

    pub fn level(&self, t: Trait) -> Level {
        self.levels[t.index()]
    }

    /// Parses a trait → level map. Trait names and levels are matched
    /// case-insensitively; every trait must be present exactly once.
    pub fn from_map<K: AsRef<str>, V: AsRef<str>>(map: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let mut levels: [Option<Level>; 5] = [None; 5];
        for (k, v) in map {
            let t: Trait = k.as_ref().parse()?;
            let level = v.as_ref().parse::<Level>().map_err(|value| PersonaError::InvalidLevel {
                trait_name: t.name().to_string(),
                value,
            })?;
            levels[t.index()] = Some(level);
        }
        let mut out = [Level::Medium; 5];
        for t in Trait::ALL {
            out[t.index()] = levels[t.index()].ok_or(PersonaError::MissingTrait(t))?;
        }
        Ok(Self { levels: out })
    }

    /// Buckets one score per trait (in [`Trait::ALL`] order).
    pub fn from_scores(scores: &[f64; 5], thresholds: &TraitThresholds) -> Self {
        let mut levels = [Level::Medium; 5];
        for t in Trait::ALL {
            levels[t.index()] = categorize(scores[t.index()], &thresholds.per_trait[t.index()]);
        }
        Self { levels }
    }
}

impl TryFrom<BTreeMap<String, String>> for PersonaProfile {
    type Error = PersonaError;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self> {
        Self::from_map(map)
    }
}

impl From<PersonaProfile> for BTreeMap<String, String> {
    fn from(p: PersonaProfile) -> Self {
        Trait::ALL
            .into_iter()
            .map(|t| (t.name().to_string(), p.level(t).name().to_string()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitThreshold {
    pub p34: f64,
    pub p66: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitThresholds {
    /// In [`Trait::ALL`] order.
    pub per_trait: [TraitThreshold; 5],
}

impl TraitThresholds {
    pub fn get(&self, t: Trait) -> TraitThreshold {
        self.per_trait[t.index()]
    }
}

/// Nearest-rank percentile: the value at 1-based index `ceil(q · n / 100)`
/// of the ascending sample (index at least 1).
pub fn nearest_rank(sorted: &[f64], q: u32) -> Option<f64> {
    if sorted.is_empty() || q > 100 {
        return None;
    }
    let n = sorted.len();
    let rank = (q as usize * n).div_ceil(100).max(1);
    Some(sorted[rank - 1])
}

fn column_threshold(t: Trait, scores: &[f64]) -> Result<TraitThreshold> {
    if scores.is_empty() {
        return Err(PersonaError::EmptyTrait(t));
    }
    if scores.len() < 3 {
        return Err(PersonaError::TooFewScores { trait_name: t, n: scores.len() });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(PersonaError::NonFinite(t));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(TraitThreshold {
        p34: nearest_rank(&sorted, 34).expect("non-empty"),
        p66: nearest_rank(&sorted, 66).expect("non-empty"),
    })
}

/// Per-trait 34th and 66th nearest-rank percentiles of a population.
/// `scores` holds one column per trait in [`Trait::ALL`] order.
pub fn compute_thresholds(scores: &[Vec<f64>]) -> Result<TraitThresholds> {
    if scores.len() != 5 {
        return Err(PersonaError::TraitCount { expected: 5, got: scores.len() });
    }
    let mut per_trait = [TraitThreshold { p34: 0.0, p66: 0.0 }; 5];
    for t in Trait::ALL {
        per_trait[t.index()] = column_threshold(t, &scores[t.index()])?;
    }
    Ok(TraitThresholds { per_trait })
}

/// High strictly above p66, Low strictly below p34, Medium otherwise.
pub fn categorize(score: f64, th: &TraitThreshold) -> Level {
    if score > th.p66 {
        Level::High
    } else if score < th.p34 {
        Level::Low
    } else {
        Level::Medium
    }
}

pub fn build_prompt(profile: &PersonaProfile) -> String {
    let traits: Vec<String> = Trait::ALL
        .iter()
        .map(|t| format!("{}: {}", t.name(), profile.level(*t).name()))
        .collect();
    format!("You are a chatbot. Your personality is: {}. Respond as yourself.", traits.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cols(v: Vec<f64>) -> Vec<Vec<f64>> {
        vec![v; 5]
    }

    #[test]
    fn thresholds_on_one_to_hundred() {
        let th = compute_thresholds(&cols((1..=100).map(f64::from).collect())).unwrap();
        for t in Trait::ALL {
            assert_eq!(th.get(t).p34, 34.0);
            assert_eq!(th.get(t).p66, 66.0);
        }
        let one = th.get(Trait::Openness);
        assert_eq!(categorize(80.0, &one), Level::High);
        assert_eq!(categorize(34.0, &one), Level::Medium);
        assert_eq!(categorize(66.0, &one), Level::Medium);
        assert_eq!(categorize(10.0, &one), Level::Low);
    }

    #[test]
    fn small_and_degenerate_samples() {
        let th = compute_thresholds(&cols(vec![3.0, 1.0, 2.0])).unwrap();
        assert_eq!(th.get(Trait::Neuroticism), TraitThreshold { p34: 2.0, p66: 2.0 });
        let flat = compute_thresholds(&cols(vec![5.0; 10])).unwrap();
        assert_eq!(flat.get(Trait::Extraversion), TraitThreshold { p34: 5.0, p66: 5.0 });
        assert_eq!(categorize(5.0, &flat.get(Trait::Extraversion)), Level::Medium);
    }

    #[test]
    fn threshold_errors() {
        let mut c = cols(vec![1.0, 2.0, 3.0]);
        c[2] = vec![];
        assert!(matches!(compute_thresholds(&c), Err(PersonaError::EmptyTrait(Trait::Extraversion))));
        c[2] = vec![1.0, 2.0];
        assert!(matches!(compute_thresholds(&c), Err(PersonaError::TooFewScores { .. })));
        c[2] = vec![1.0, f64::NAN, 2.0];
        assert!(matches!(compute_thresholds(&c), Err(PersonaError::NonFinite(_))));
        assert!(compute_thresholds(&c[..4]).is_err());
    }

    #[test]
    fn prompt_template() {
        assert_eq!(
            build_prompt(&PersonaProfile::uniform(Level::Medium)),
            "You are a chatbot. Your personality is: Openness: Medium, Conscientiousness: Medium, Extraversion: Medium, Agreeableness: Medium, Neuroticism: Medium. Respond as yourself."
        );
        let p = PersonaProfile::new([Level::High, Level::Low, Level::Medium, Level::High, Level::Low]);
        assert_eq!(
            build_prompt(&p),
            "You are a chatbot. Your personality is: Openness: High, Conscientiousness: Low, Extraversion: Medium, Agreeableness: High, Neuroticism: Low. Respond as yourself."
        );
        assert_eq!(build_prompt(&p), build_prompt(&p));
    }

    #[test]
    fn profile_json_roundtrip_and_validation() {
        let p = PersonaProfile::new([Level::High, Level::Low, Level::Medium, Level::High, Level::Low]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<PersonaProfile>(&s).unwrap(), p);
        let lower = r#"{"openness":"high","conscientiousness":"low","extraversion":"medium","agreeableness":"HIGH","neuroticism":"Low"}"#;
        assert_eq!(serde_json::from_str::<PersonaProfile>(lower).unwrap(), p);
        let bad = r#"{"Openness":"Very","Conscientiousness":"Low","Extraversion":"Medium","Agreeableness":"High","Neuroticism":"Low"}"#;
        let err = serde_json::from_str::<PersonaProfile>(bad).unwrap_err().to_string();
        assert!(err.contains("High, Medium, Low"), "{err}");
        let missing = r#"{"Openness":"High"}"#;
        assert!(serde_json::from_str::<PersonaProfile>(missing).is_err());
    }

    fn level_strategy() -> impl Strategy<Value = Level> {
        prop_oneof![Just(Level::Low), Just(Level::Medium), Just(Level::High)]
    }

    proptest! {
        #[test]
        fn categorize_is_monotone(a in -200.0f64..200.0, d in 0.0f64..100.0, lo in -50.0f64..50.0, w in 0.0f64..50.0) {
            let th = TraitThreshold { p34: lo, p66: lo + w };
            prop_assert!(categorize(a, &th) <= categorize(a + d, &th));
        }

        #[test]
        fn thresholds_are_ordered(v in prop::collection::vec(-1e3f64..1e3, 3..60)) {
            let th = compute_thresholds(&cols(v)).unwrap();
            for t in Trait::ALL {
                prop_assert!(th.get(t).p34 <= th.get(t).p66);
            }
        }

        #[test]
        fn distinct_profiles_give_distinct_prompts(a in prop::array::uniform5(level_strategy()), b in prop::array::uniform5(level_strategy())) {
            let (pa, pb) = (PersonaProfile::new(a), PersonaProfile::new(b));
            prop_assert_eq!(pa == pb, build_prompt(&pa) == build_prompt(&pb));
        }
    }
}
