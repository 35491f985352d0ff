//! Central finite-difference checks for every tape primitive, both
//! regression heads and a composite MLP: 100 seeded trials each. Shared by
//! the core test suite and the acceptance runner.
#![allow(dead_code)]

use psykit_core::autodiff::{grad_check, tape_function, ParamStore, Tape, Tensor, Var};
use psykit_core::models::{Head, HeadKind, Regressor, RegressorConfig};
use psykit_core::trainer::Trainable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRIALS: u64 = 100;
pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub worst: f64,
    /// First trial whose relative error reached `TOL`.
    pub failed_trial: Option<u64>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.failed_trial.is_none() && self.worst < TOL
    }
}

pub type Group = fn(&mut Vec<CaseResult>);

pub const GROUPS: [(&str, Group); 10] = [
    ("matmul", matmul_both_sides),
    ("add/sub/mul", add_sub_mul),
    ("scalar", scalar_ops),
    ("activations", activations),
    ("softmax/cross-entropy", softmax_and_cross_entropy),
    ("structural", structural_ops),
    ("reductions", reductions),
    ("bounded head", bounded_head),
    ("unbounded head", unbounded_head),
    ("composite mlp", composite_mlp),
];

pub fn all() -> Vec<CaseResult> {
    let mut out = Vec::new();
    for (_, g) in GROUPS {
        g(&mut out);
    }
    out
}

type Builder = Box<dyn Fn(&mut Tape, Var) -> psykit_core::autodiff::Result<Var> + Sync>;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rand_vec(rng, n, -1.5, 1.5)).unwrap()
}

/// Contracts an `[r, c]` node with fixed random weights into a scalar.
fn contract(t: &mut Tape, out: Var, w: &Tensor) -> psykit_core::autodiff::Result<Var> {
    let c = t.constant(w.clone());
    let m = t.mul(out, c)?;
    Ok(t.mean(m))
}

fn run(out: &mut Vec<CaseResult>, name: &str, make: impl Fn(&mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>, Builder)) {
    let mut worst: f64 = 0.0;
    let mut failed_trial = None;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let (shape, point, build) = make(&mut rng);
        let f = tape_function(shape, build);
        let err = grad_check(f, &point, EPS);
        worst = worst.max(err);
        if !(err < TOL) && failed_trial.is_none() {
            failed_trial = Some(trial);
        }
    }
    out.push(CaseResult { name: name.to_string(), worst, failed_trial });
}

/// Unary elementwise primitive on a random `[r, c]` input, contracted.
fn unary(rng: &mut ChaCha8Rng, op: fn(&mut Tape, Var) -> Var, avoid_zero: bool) -> (Vec<usize>, Vec<f64>, Builder) {
    let (r, c) = (rng.random_range(1..5), rng.random_range(1..6));
    let mut x = rand_vec(rng, r * c, -2.0, 2.0);
    if avoid_zero {
        for v in &mut x {
            if v.abs() < 0.05 {
                *v += 0.1_f64.copysign(*v);
            }
        }
    }
    let w = rand_tensor(rng, &[r, c]);
    (vec![r, c], x, Box::new(move |t, v| {
        let y = op(t, v);
        contract(t, y, &w)
    }))
}

pub fn matmul_both_sides(out: &mut Vec<CaseResult>) {
    run(out, "matmul(x, B)", |rng| {
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let b = rand_tensor(rng, &[k, n]);
        let w = rand_tensor(rng, &[m, n]);
        (vec![m, k], rand_vec(rng, m * k, -1.5, 1.5), Box::new(move |t, x| {
            let bb = t.constant(b.clone());
            let y = t.matmul(x, bb)?;
            contract(t, y, &w)
        }))
    });
    run(out, "matmul(A, x)", |rng| {
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let a = rand_tensor(rng, &[m, k]);
        let w = rand_tensor(rng, &[m, n]);
        (vec![k, n], rand_vec(rng, k * n, -1.5, 1.5), Box::new(move |t, x| {
            let aa = t.constant(a.clone());
            let y = t.matmul(aa, x)?;
            contract(t, y, &w)
        }))
    });
}

pub fn add_sub_mul(out: &mut Vec<CaseResult>) {
    run(out, "add same shape", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let b = rand_tensor(rng, &[r, c]);
        let w = rand_tensor(rng, &[r, c]);
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, x| {
            let bb = t.constant(b.clone());
            let y = t.add(x, bb)?;
            contract(t, y, &w)
        }))
    });
    run(out, "add row broadcast (bias side)", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let a = rand_tensor(rng, &[r, c]);
        let w = rand_tensor(rng, &[r, c]);
        (vec![c], rand_vec(rng, c, -1.5, 1.5), Box::new(move |t, bias| {
            let aa = t.constant(a.clone());
            let y = t.add(aa, bias)?;
            contract(t, y, &w)
        }))
    });
    run(out, "sub", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let a = rand_tensor(rng, &[r, c]);
        let w = rand_tensor(rng, &[r, c]);
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, x| {
            let aa = t.constant(a.clone());
            let y1 = t.sub(aa, x)?;
            let y2 = t.sub(y1, x)?;
            contract(t, y2, &w)
        }))
    });
    run(out, "mul", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let a = rand_tensor(rng, &[r, c]);
        let w = rand_tensor(rng, &[r, c]);
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, x| {
            let aa = t.constant(a.clone());
            let y = t.mul(x, aa)?;
            let y = t.mul(y, x)?;
            contract(t, y, &w)
        }))
    });
}

pub fn scalar_ops(out: &mut Vec<CaseResult>) {
    run(out, "scale", |rng| {
        let c = rng.random_range(-3.0..3.0);
        unary_with(rng, move |t, x| t.scale(x, c))
    });
    run(out, "add_scalar", |rng| {
        let c = rng.random_range(-3.0..3.0);
        unary_with(rng, move |t, x| {
            let y = t.add_scalar(x, c);
            t.mul(y, y).unwrap()
        })
    });
}

fn unary_with(rng: &mut ChaCha8Rng, op: impl Fn(&mut Tape, Var) -> Var + Sync + 'static) -> (Vec<usize>, Vec<f64>, Builder) {
    let (r, c) = (rng.random_range(1..5), rng.random_range(1..6));
    let w = rand_tensor(rng, &[r, c]);
    (vec![r, c], rand_vec(rng, r * c, -2.0, 2.0), Box::new(move |t, x| {
        let y = op(t, x);
        contract(t, y, &w)
    }))
}

pub fn activations(out: &mut Vec<CaseResult>) {
    run(out, "tanh", |rng| unary(rng, |t, x| t.tanh(x), false));
    run(out, "sigmoid", |rng| unary(rng, |t, x| t.sigmoid(x), false));
    run(out, "relu", |rng| unary(rng, |t, x| t.relu(x), true));
}

pub fn softmax_and_cross_entropy(out: &mut Vec<CaseResult>) {
    run(out, "softmax_rows", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(2..7));
        let w = rand_tensor(rng, &[r, c]);
        (vec![r, c], rand_vec(rng, r * c, -3.0, 3.0), Box::new(move |t, x| {
            let y = t.softmax_rows(x)?;
            contract(t, y, &w)
        }))
    });
    run(out, "cross_entropy", |rng| {
        let (r, c) = (rng.random_range(1..6), rng.random_range(2..8));
        let targets: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
        (vec![r, c], rand_vec(rng, r * c, -3.0, 3.0), Box::new(move |t, x| t.cross_entropy(x, &targets)))
    });
}

pub fn structural_ops(out: &mut Vec<CaseResult>) {
    run(out, "concat_cols", |rng| {
        let r = rng.random_range(1..5);
        let (c1, c2) = (rng.random_range(1..4), rng.random_range(1..4));
        let other = rand_tensor(rng, &[r, c2]);
        let w = rand_tensor(rng, &[r, c1 + c2 + c1]);
        (vec![r, c1], rand_vec(rng, r * c1, -1.5, 1.5), Box::new(move |t, x| {
            let o = t.constant(other.clone());
            let y = t.concat_cols(&[x, o, x])?;
            contract(t, y, &w)
        }))
    });
    run(out, "embedding", |rng| {
        let (v, d) = (rng.random_range(2..7), rng.random_range(1..5));
        let n = rng.random_range(1..9);
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
        let w = rand_tensor(rng, &[n, d]);
        (vec![v, d], rand_vec(rng, v * d, -1.5, 1.5), Box::new(move |t, table| {
            let y = t.embedding(table, &ids)?;
            contract(t, y, &w)
        }))
    });
    run(out, "reshape", |rng| {
        let (r, c) = (rng.random_range(1..4) * 2, rng.random_range(1..4));
        let w = rand_tensor(rng, &[r / 2, c * 2]);
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, x| {
            let y = t.reshape(x, &[r / 2, c * 2])?;
            let y = t.tanh(y);
            contract(t, y, &w)
        }))
    });
    run(out, "transpose", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let w = rand_tensor(rng, &[c, r]);
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, x| {
            let y = t.transpose(x)?;
            let y = t.sigmoid(y);
            contract(t, y, &w)
        }))
    });
}

pub fn reductions(out: &mut Vec<CaseResult>) {
    run(out, "mean", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, x| {
            let y = t.tanh(x);
            Ok(t.mean(y))
        }))
    });
    run(out, "mse (prediction side)", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..4));
        let y = rand_tensor(rng, &[r, c]);
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, x| {
            let yy = t.constant(y.clone());
            t.mse(x, yy)
        }))
    });
    run(out, "mse (target side)", |rng| {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..4));
        let p = rand_tensor(rng, &[r, c]);
        (vec![r, c], rand_vec(rng, r * c, -1.5, 1.5), Box::new(move |t, y| {
            let pp = t.constant(p.clone());
            t.mse(pp, y)
        }))
    });
}

/// Checks the head w.r.t. its hidden input and, separately, its parameters.
fn head_suite(out: &mut Vec<CaseResult>, name: &str, kind: HeadKind) {
    run(out, &format!("{name} head (input)"), |rng| {
        let (n, h, t) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..4));
        let mut store = ParamStore::new();
        let head = Head::new(&mut store, kind, rand_tensor(rng, &[h, t]), t).unwrap();
        let bias = store.find("head.bias").unwrap();
        store.get_mut(bias).tensor = rand_tensor(rng, &[t]);
        let target = rand_tensor(rng, &[n, t]);
        (vec![n, h], rand_vec(rng, n * h, -2.0, 2.0), Box::new(move |tape, x| {
            let out = head.forward(tape, &store, x).map_err(|e| match e {
                psykit_core::models::ModelError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            let y = tape.constant(target.clone());
            tape.mse(out, y)
        }))
    });
    let mut worst: f64 = 0.0;
    let mut failed_trial = None;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let (n, h, t) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..4));
        let mut store = ParamStore::new();
        let head = Head::new(&mut store, kind, rand_tensor(&mut rng, &[h, t]), t).unwrap();
        let x = rand_tensor(&mut rng, &[n, h]);
        let target = rand_tensor(&mut rng, &[n, t]);
        let mut point = store.trainable_flat();
        for v in &mut point {
            *v += rng.random_range(-0.5..0.5);
        }
        let f = |flat: &[f64]| {
            let mut s = store.clone();
            s.set_trainable_flat(flat);
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let out = head.forward(&mut tape, &s, xv).unwrap();
            let y = tape.constant(target.clone());
            let loss = tape.mse(out, y).unwrap();
            let v = tape.value(loss).item();
            let g = tape.backward(loss).unwrap();
            (v, s.flatten_grads(&g))
        };
        let err = grad_check(f, &point, EPS);
        worst = worst.max(err);
        if !(err < TOL) && failed_trial.is_none() {
            failed_trial = Some(trial);
        }
    }
    out.push(CaseResult { name: format!("{name} head (params)"), worst, failed_trial });
}

pub fn bounded_head(out: &mut Vec<CaseResult>) {
    head_suite(out, "bounded", HeadKind::bounded());
    head_suite(out, "bounded narrow", HeadKind::Bounded { lo: 0.5, hi: 2.0 });
}

pub fn unbounded_head(out: &mut Vec<CaseResult>) {
    head_suite(out, "unbounded", HeadKind::Unbounded);
}

pub fn composite_mlp(out: &mut Vec<CaseResult>) {
    let mut worst: f64 = 0.0;
    let mut failed_trial = None;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + trial);
        let (n, d, t) = (rng.random_range(2..6), rng.random_range(1..6), rng.random_range(1..3));
        let head = if trial % 2 == 0 { HeadKind::bounded() } else { HeadKind::Unbounded };
        let cfg = RegressorConfig {
            hidden: rng.random_range(1..6),
            head,
            normalize_targets: trial % 3 != 0,
            seed: trial,
            init_std: 0.7,
        };
        let mut m = Regressor::new(d, t, cfg).unwrap();
        let x = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let y = rand_vec(&mut rng, n * t, -5.0, 5.0);
        let data = m.prepare(x, &y).unwrap();
        let batch: Vec<usize> = (0..n).collect();
        let f = |flat: &[f64]| {
            let mut mm = m.clone();
            mm.params_mut().set_trainable_flat(flat);
            let mut tape = Tape::new();
            let loss = mm.loss(&mut tape, &data, &batch).unwrap();
            let v = tape.value(loss).item();
            let g = tape.backward(loss).unwrap();
            (v, mm.params().flatten_grads(&g))
        };
        let err = grad_check(f, &m.params().trainable_flat(), EPS);
        worst = worst.max(err);
        if !(err < TOL) && failed_trial.is_none() {
            failed_trial = Some(trial);
        }
    }
    out.push(CaseResult { name: "composite mlp".into(), worst, failed_trial });
}
