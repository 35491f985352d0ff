//! Regression output layers.
//!
//! [`BoundedHead`] is a linear layer followed by a sigmoid whose `(0, 1)`
//! output is rescaled affinely onto `(lo, hi)`; [`UnboundedHead`] is the plain
//! linear layer. Both map a hidden `[n, h]` batch to `[n, t]` predictions.

use super::{ModelError, Result};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BOUNDS: (f64, f64) = (-3.0, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Bounded { lo: f64, hi: f64 },
    Unbounded,
}

impl HeadKind {
    pub fn bounded() -> Self {
        HeadKind::Bounded {
            lo: DEFAULT_BOUNDS.0,
            hi: DEFAULT_BOUNDS.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnboundedHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub lo: f64,
    pub hi: f64,
}

fn check_width(store: &ParamStore, weight: ParamId, tape: &Tape, hidden: Var) -> Result<()> {
    let (h, _) = store.tensor(weight).dims2()?;
    let (_, width) = tape.value(hidden).dims2()?;
    if h != width {
        return Err(ModelError::Shape(format!("head expects width {h}, hidden has {width}")));
    }
    Ok(())
}

impl UnboundedHead {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, hidden: Var) -> Result<Var> {
        check_width(store, self.weight, tape, hidden)?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let z = tape.matmul(hidden, w)?;
        Ok(tape.add(z, b)?)
    }
}

impl BoundedHead {
    /// `lo + (hi − lo) · sigmoid(h·W + b)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, hidden: Var) -> Result<Var> {
        check_width(store, self.weight, tape, hidden)?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let z = tape.matmul(hidden, w)?;
        let z = tape.add(z, b)?;
        let s = tape.sigmoid(z);
        let s = tape.scale(s, self.hi - self.lo);
        Ok(tape.add_scalar(s, self.lo))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Bounded(BoundedHead),
    Unbounded(UnboundedHead),
}

impl Head {
    /// Registers `weight[hidden, targets]` (scaled normal init from `init`)
    /// and a zero bias.
    pub fn new(store: &mut ParamStore, kind: HeadKind, weight: Tensor, n_targets: usize) -> Result<Self> {
        let w = store.add("head.weight", weight, true);
        let b = store.add("head.bias", Tensor::zeros(&[n_targets]), true);
        Ok(match kind {
            HeadKind::Bounded { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(ModelError::Fit(format!("invalid head bounds ({lo}, {hi})")));
                }
                Head::Bounded(BoundedHead { weight: w, bias: b, lo, hi })
            }
            HeadKind::Unbounded => Head::Unbounded(UnboundedHead { weight: w, bias: b }),
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Bounded(h) => HeadKind::Bounded { lo: h.lo, hi: h.hi },
            Head::Unbounded(_) => HeadKind::Unbounded,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, hidden: Var) -> Result<Var> {
        match self {
            Head::Bounded(h) => h.forward(tape, store, hidden),
            Head::Unbounded(h) => h.forward(tape, store, hidden),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bounded(w: Vec<f64>, b: f64) -> (ParamStore, Head) {
        let mut store = ParamStore::new();
        let n = w.len();
        let head = Head::new(&mut store, HeadKind::bounded(), Tensor::new(&[n, 1], w).unwrap(), 1).unwrap();
        store.get_mut(ParamId(1)).tensor = Tensor::new(&[1], vec![b]).unwrap();
        (store, head)
    }

    fn run(store: &ParamStore, head: &Head, h: Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(h);
        let y = head.forward(&mut tape, store, x).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn zero_preactivation_is_midpoint() {
        let (store, head) = bounded(vec![0.0, 0.0], 0.0);
        assert_eq!(run(&store, &head, Tensor::new(&[1, 2], vec![5.0, -2.0]).unwrap()), vec![0.0]);
    }

    #[test]
    fn saturates_towards_bounds() {
        let (store, head) = bounded(vec![1.0], 0.0);
        let y = run(&store, &head, Tensor::new(&[3, 1], vec![10.0, 30.0, -30.0]).unwrap());
        assert!(y[0] < 3.0 && y[0] > 2.99);
        assert!(y[1] <= 3.0 && y[1] > 2.999_999);
        assert!(y[2] >= -3.0 && y[2] < -2.999_999);
    }

    #[test]
    fn rejects_bad_bounds_and_widths() {
        let mut store = ParamStore::new();
        let bad = HeadKind::Bounded { lo: 1.0, hi: 1.0 };
        assert!(Head::new(&mut store, bad, Tensor::zeros(&[2, 1]), 1).is_err());
        let (store, head) = bounded(vec![0.0, 0.0], 0.0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(head.forward(&mut tape, &store, x).is_err());
    }

    proptest! {
        #[test]
        fn outputs_stay_inside_open_interval(h in prop::collection::vec(-1e6f64..1e6, 1..8), w in -1e3f64..1e3) {
            // Within f64 the sigmoid rounds to exactly 0 or 1 once |z| is
            // large, so the closed interval is the representable guarantee;
            // moderate inputs stay strictly inside.
            let (store, head) = bounded(vec![w], 0.0);
            let n = h.len();
            let y = run(&store, &head, Tensor::new(&[n, 1], h.clone()).unwrap());
            for (out, inp) in y.iter().zip(&h) {
                prop_assert!(out.is_finite());
                prop_assert!(*out >= -3.0 && *out <= 3.0);
                if (inp * w).abs() < 30.0 {
                    prop_assert!(*out > -3.0 && *out < 3.0);
                }
            }
        }
    }
}
