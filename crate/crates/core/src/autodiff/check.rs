//! Central finite-difference gradient checking.

use super::{Result, Tape, Tensor, Var};
use crate::par;

/// Per-coordinate central differences `(f(x+ε) − f(x−ε)) / 2ε`.
pub fn numeric_gradient<F>(f: F, point: &[f64], epsilon: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    par::map_range(point.len(), |i| {
        let mut x = point.to_vec();
        x[i] = point[i] + epsilon;
        let up = f(&x);
        x[i] = point[i] - epsilon;
        let down = f(&x);
        (up - down) / (2.0 * epsilon)
    })
}

/// Compares the analytic gradient returned by `f` against central
/// differences and returns the largest relative error, using the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &[f64], epsilon: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length must match the point");
    let numeric = numeric_gradient(|x| f(x).0, point, epsilon);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Wraps a graph builder as a `(value, gradient)` function of a flat input
/// tensor of the given shape.
pub fn tape_function<B>(shape: Vec<usize>, build: B) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + Sync
where
    B: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    move |x: &[f64]| {
        let mut tape = Tape::new();
        let input = tape.var(Tensor::new(&shape, x.to_vec()).expect("point matches shape"));
        let loss = build(&mut tape, input).expect("graph builds");
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).expect("scalar loss");
        let g = grads
            .wrt(input)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; x.len()]);
        (value, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{AutodiffError, ParamStore};

    #[test]
    fn linear_function_is_exact() {
        let f = |x: &[f64]| (3.0 * x[0] - 2.0 * x[1] + 0.5, vec![3.0, -2.0]);
        assert!(grad_check(f, &[0.3, -1.1], 1e-5) < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| (x[0] * x[0], vec![2.0 * 2.0 * x[0]]);
        let err = grad_check(f, &[1.3], 1e-5);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn square_at_three() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn gradients_accumulate_until_reset() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 12.0);
        tape.reset();
        assert!(tape.is_empty());
        assert!(tape.gradients().wrt(x).is_none());
    }

    #[test]
    fn independent_param_gets_zero_and_frozen_gets_none() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0), true);
        let unused = store.add("unused", Tensor::scalar(5.0), true);
        let frozen = store.add("frozen", Tensor::scalar(7.0), false);
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let _ = tape.param(&store, unused);
        let f = tape.param(&store, frozen);
        let y = tape.mul(u, f).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.param(used).unwrap().item(), 7.0);
        let flat = store.flatten_grads(&g);
        assert_eq!(flat, vec![7.0, 0.0]);
        assert!(g.param(frozen).is_none());
    }

    #[test]
    fn matmul_examples() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::column(vec![1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
        assert!(matches!(b.matmul(&b), Err(AutodiffError::Shape(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn sigmoid_identities() {
        let mut tape = Tape::new();
        let z = tape.var(Tensor::new(&[4], vec![0.0, 1.5, -1.5, 800.0]).unwrap());
        let s = tape.sigmoid(z);
        let v = tape.value(s).data().to_vec();
        assert_eq!(v[0], 0.5);
        assert!((v[1] + v[2] - 1.0).abs() < 1e-15);
        assert_eq!(v[3], 1.0);
        let mut tape = Tape::new();
        let z = tape.var(Tensor::scalar(-800.0));
        let s = tape.sigmoid(z);
        assert!(tape.value(s).item() >= 0.0 && tape.value(s).item().is_finite());

        let f = tape_function(vec![1], |t, x| Ok(t.sigmoid(x)));
        assert_eq!(f(&[0.0]).1[0], 0.25);
        let numeric = numeric_gradient(|x| f(x).0, &[0.0], 1e-5);
        assert!((numeric[0] - 0.25).abs() < 1e-10);
    }

    #[test]
    fn loss_examples() {
        let mut tape = Tape::new();
        let p = tape.var(Tensor::new(&[2], vec![0.0, 0.0]).unwrap());
        let t = tape.constant(Tensor::new(&[2], vec![1.0, 1.0]).unwrap());
        let l = tape.mse(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        let l0 = tape.mse(t, t).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);

        let logits = tape.var(Tensor::zeros(&[3, 4]));
        let ce = tape.cross_entropy(logits, &[0, 1, 3]).unwrap();
        assert!((tape.value(ce).item() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(tape.cross_entropy(logits, &[0, 1, 4]), Err(AutodiffError::Bounds { .. })));

        let wide = tape.var(Tensor::new(&[1, 3], vec![500.0, 0.0, 0.0]).unwrap());
        let ce = tape.cross_entropy(wide, &[0]).unwrap();
        assert!(tape.value(ce).item() < 1e-200);
    }
}
