//! Instruction corpora: scored texts become (persona prompt, response) pairs.

use super::{build_prompt, compute_thresholds, PersonaError, PersonaProfile, Result, Trait, TraitThresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

/// One JSON line: `{"scores": {"Openness": 71.0, ...}, "text": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub scores: BTreeMap<String, f64>,
    pub text: String,
}

impl InstructionRecord {
    /// Scores in [`Trait::ALL`] order; trait names match case-insensitively.
    pub fn trait_scores(&self) -> Result<[f64; 5]> {
        let mut out = [f64::NAN; 5];
        for (k, v) in &self.scores {
            let t: Trait = k.parse()?;
            out[t.index()] = *v;
        }
        for t in Trait::ALL {
            if out[t.index()].is_nan() {
                return Err(PersonaError::MissingTrait(t));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub profile: PersonaProfile,
    pub prompt: String,
    pub response: String,
}

pub fn read_instruction_jsonl(path: impl AsRef<Path>) -> Result<Vec<InstructionRecord>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| PersonaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstructionRecord = serde_json::from_str(line).map_err(|e| PersonaError::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_instruction_jsonl(path: impl AsRef<Path>, records: &[InstructionRecord]) -> Result<()> {
    let path = path.as_ref();
    let io = |source| PersonaError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Buckets each record's scores into a profile and pairs its prompt with the
/// record text. Thresholds are computed on `records` unless given.
pub fn build_instruction_pairs(
    records: &[InstructionRecord],
    thresholds: Option<&TraitThresholds>,
) -> Result<(TraitThresholds, Vec<InstructionPair>)> {
    if records.is_empty() {
        return Err(PersonaError::EmptyCorpus);
    }
    let scores = records.iter().map(InstructionRecord::trait_scores).collect::<Result<Vec<_>>>()?;
    let th = match thresholds {
        Some(t) => t.clone(),
        None => {
            let cols: Vec<Vec<f64>> = (0..5).map(|j| scores.iter().map(|s| s[j]).collect()).collect();
            compute_thresholds(&cols)?
        }
    };
    let pairs = records
        .iter()
        .zip(&scores)
        .map(|(r, s)| {
            let profile = PersonaProfile::from_scores(s, &th);
            InstructionPair {
                profile,
                prompt: build_prompt(&profile),
                response: r.text.clone(),
            }
        })
        .collect();
    Ok((th, pairs))
}

const PHRASES: [[[&str; 2]; 3]; 5] = [
    [
        ["i love trying strange new ideas", "art and travel excite me"],
        ["new things are fine sometimes", "i like a mix of old and new"],
        ["i prefer the familiar way", "routine suits me best"],
    ],
    [
        ["i plan every step carefully", "my work is always on time"],
        ["i keep things mostly in order", "i plan when it matters"],
        ["plans change so i improvise", "deadlines are just suggestions"],
    ],
    [
        ["parties give me energy", "i talk to everyone i meet"],
        ["i enjoy company and quiet alike", "small groups are nice"],
        ["i recharge alone at home", "quiet evenings are my favorite"],
    ],
    [
        ["i am happy to help you", "kindness matters most to me"],
        ["i help when i can", "i am fair with people"],
        ["i say what i think bluntly", "i look out for myself first"],
    ],
    [
        ["i worry about many things", "stress gets to me quickly"],
        ["some days feel tense", "i stay calm most of the time"],
        ["nothing really rattles me", "i stay relaxed under pressure"],
    ],
];

fn level_of(score: f64) -> usize {
    if score > 66.0 {
        0
    } else if score < 34.0 {
        2
    } else {
        1
    }
}

/// A toy corpus whose responses depend on the trait levels: scores are
/// uniform on [1, 100] and each trait contributes one phrase chosen by its
/// level.
pub fn synthetic_instruction_records(n: usize, seed: u64) -> Vec<InstructionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let scores: [f64; 5] = std::array::from_fn(|_| rng.random_range(1.0..=100.0f64).round());
            let text = Trait::ALL
                .iter()
                .map(|t| PHRASES[t.index()][level_of(scores[t.index()])][rng.random_range(0..2)])
                .collect::<Vec<_>>()
                .join(" ");
            InstructionRecord {
                scores: Trait::ALL.iter().map(|t| (t.name().to_string(), scores[t.index()])).collect(),
                text,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::Level;

    #[test]
    fn jsonl_roundtrip_and_pairs() {
        let recs = synthetic_instruction_records(40, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.jsonl");
        write_instruction_jsonl(&path, &recs).unwrap();
        assert_eq!(read_instruction_jsonl(&path).unwrap(), recs);
        let (th, pairs) = build_instruction_pairs(&recs, None).unwrap();
        assert_eq!(pairs.len(), 40);
        for (p, r) in pairs.iter().zip(&recs) {
            assert_eq!(p.prompt, build_prompt(&p.profile));
            assert_eq!(p.response, r.text);
            let s = r.trait_scores().unwrap();
            assert_eq!(p.profile.level(Trait::Openness), crate::persona::categorize(s[0], &th.get(Trait::Openness)));
        }
    }

    #[test]
    fn record_validation() {
        let mut r = InstructionRecord {
            scores: [("openness".to_string(), 5.0)].into_iter().collect(),
            text: "hi".into(),
        };
        assert!(matches!(r.trait_scores(), Err(PersonaError::MissingTrait(_))));
        r.scores.insert("Humor".into(), 1.0);
        assert!(matches!(r.trait_scores(), Err(PersonaError::UnknownTrait(_))));
        assert!(matches!(build_instruction_pairs(&[], None), Err(PersonaError::EmptyCorpus)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"scores\":{},\"text\":\"a\"}\nnot json\n").unwrap();
        assert!(matches!(read_instruction_jsonl(&path), Err(PersonaError::Corpus { line: 2, .. })));
    }

    #[test]
    fn fixed_thresholds_are_used() {
        let recs = synthetic_instruction_records(5, 1);
        let th = compute_thresholds(&vec![vec![1000.0, 1001.0, 1002.0]; 5]).unwrap();
        let (_, pairs) = build_instruction_pairs(&recs, Some(&th)).unwrap();
        assert!(pairs.iter().all(|p| p.profile == PersonaProfile::uniform(Level::Low)));
    }
}
