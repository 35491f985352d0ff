use super::{CorpusError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Train / validation / test proportions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            ratios: [train, val, test],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(CorpusError::Config(format!("split ratio {r} outside (0, 1)")));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..n` into three disjoint index sets after a seeded shuffle.
/// Train and validation sizes are rounded; test takes the remainder.
pub fn split(n: usize, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((spec.ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((spec.ratios[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Splits { train: idx, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eighty_ten_ten() {
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 7);
        let a = split(100, &spec).unwrap();
        assert_eq!(a, split(100, &spec).unwrap());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(split(10, &SplitSpec::new(0.8, 0.1, 0.2, 0)).is_err());
        assert!(split(10, &SplitSpec::new(1.0, 0.0, 0.0, 0)).is_err());
        assert!(split(10, &SplitSpec::new(0.5, 0.5, 1e-8, 0)).is_err());
        assert!(split(10, &SplitSpec::new(0.5, 0.5 - 1e-12, 1e-12, 0)).is_ok());
    }

    proptest! {
        #[test]
        fn partition_property(n in 0usize..500, seed in any::<u64>(), a in 0.05f64..0.9) {
            let rest = 1.0 - a;
            let spec = SplitSpec::new(a, rest * 0.5, rest * 0.5, seed);
            let s = split(n, &spec).unwrap();
            prop_assert_eq!(&s, &split(n, &spec).unwrap());
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for (len, r) in [(s.train.len(), spec.ratios[0]), (s.val.len(), spec.ratios[1]), (s.test.len(), spec.ratios[2])] {
                prop_assert!((len as f64 - r * n as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
