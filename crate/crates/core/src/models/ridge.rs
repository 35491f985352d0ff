use super::{ModelError, Result};
use crate::features::SparseVector;
use crate::par;
use serde::{Deserialize, Serialize};

/// Column-compressed view of sparse rows: `cols[j]` lists `(row, value)`.
fn to_columns(x: &[SparseVector], dim: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut cols = vec![Vec::new(); dim];
    for (r, row) in x.iter().enumerate() {
        for (&i, &v) in row.indices.iter().zip(&row.values) {
            if i >= dim {
                return Err(ModelError::Shape(format!("feature index {i} >= dim {dim}")));
            }
            cols[i].push((r, v));
        }
    }
    Ok(cols)
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// `XᵀX` (dense `[dim, dim]`) and `Xᵀy` (`[dim, t]`).
fn normal_equations(x: &[SparseVector], dim: usize, y: &[f64], t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if t == 0 || y.len() != x.len() * t {
        return Err(ModelError::Shape(format!("{} rows but {} target values for t = {t}", x.len(), y.len())));
    }
    let cols = to_columns(x, dim)?;
    let rows: Vec<Vec<f64>> = par::map_range(dim, |a| {
        let mut row = vec![0.0; dim + t];
        for b in 0..dim {
            row[b] = sparse_dot(&cols[a], &cols[b]);
        }
        for &(r, v) in &cols[a] {
            for k in 0..t {
                row[dim + k] += v * y[r * t + k];
            }
        }
        row
    });
    let mut gram = Vec::with_capacity(dim * dim);
    let mut rhs = Vec::with_capacity(dim * t);
    for row in rows {
        gram.extend_from_slice(&row[..dim]);
        rhs.extend_from_slice(&row[dim..]);
    }
    Ok((gram, rhs))
}

/// Solves `A W = B` for symmetric positive-definite `A` (`[n, n]`) and
/// `B` (`[n, t]`) by Cholesky factorization.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize, t: usize) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n * t {
        return Err(ModelError::Shape("cholesky_solve: bad operand sizes".into()));
    }
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let tol = max_diag.max(f64::MIN_POSITIVE) * 1e-13;
    // Lower factor stored row-major; column j is filled once rows < j are done.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let d = a[j * n + j] - (0..j).map(|k| l[j * n + k] * l[j * n + k]).sum::<f64>();
        if !(d > tol) {
            return Err(ModelError::Solver(format!("matrix not positive definite at pivot {j} ({d:e})")));
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        let lj: Vec<f64> = l[j * n..j * n + j].to_vec();
        let below = par::map_range(n - j - 1, |off| {
            let i = j + 1 + off;
            let s: f64 = (0..j).map(|k| l[i * n + k] * lj[k]).sum();
            (a[i * n + j] - s) / djj
        });
        for (off, v) in below.into_iter().enumerate() {
            l[(j + 1 + off) * n + j] = v;
        }
    }
    let cols = par::map_range(t, |c| {
        let mut z = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i * n + k] * z[k]).sum();
            z[i] = (b[i * t + c] - s) / l[i * n + i];
        }
        let mut w = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[k * n + i] * w[k]).sum();
            w[i] = (z[i] - s) / l[i * n + i];
        }
        w
    });
    let mut out = vec![0.0; n * t];
    for (c, w) in cols.iter().enumerate() {
        for i in 0..n {
            out[i * t + c] = w[i];
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Solver("non-finite solution".into()));
    }
    Ok(out)
}

/// Solves `(XᵀX + λI) W = Xᵀy` and returns `W` as row-major `[dim, t]`.
pub fn ridge_fit(x: &[SparseVector], dim: usize, y: &[f64], t: usize, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ModelError::Fit(format!("lambda must be positive, got {lambda}")));
    }
    let (mut gram, rhs) = normal_equations(x, dim, y, t)?;
    for i in 0..dim {
        gram[i * dim + i] += lambda;
    }
    cholesky_solve(&gram, &rhs, dim, t)
}

/// Ridge regression with an unpenalized intercept, fitted on centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeRegressor {
    pub dim: usize,
    pub n_targets: usize,
    pub lambda: f64,
    /// Row-major `[dim, t]`.
    pub weights: Vec<f64>,
    pub intercept: Vec<f64>,
}

impl RidgeRegressor {
    pub fn fit(x: &[SparseVector], dim: usize, y: &[f64], t: usize, lambda: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(ModelError::Fit("ridge needs at least one row".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ModelError::Fit(format!("lambda must be positive, got {lambda}")));
        }
        let n = x.len() as f64;
        let (mut gram, mut rhs) = normal_equations(x, dim, y, t)?;
        let mut mu = vec![0.0; dim];
        for row in x {
            for (&i, &v) in row.indices.iter().zip(&row.values) {
                mu[i] += v / n;
            }
        }
        let ybar: Vec<f64> = (0..t).map(|k| y.iter().skip(k).step_by(t).sum::<f64>() / n).collect();
        for a in 0..dim {
            for b in 0..dim {
                gram[a * dim + b] -= n * mu[a] * mu[b];
            }
            gram[a * dim + a] += lambda;
            for k in 0..t {
                rhs[a * t + k] -= n * mu[a] * ybar[k];
            }
        }
        let weights = cholesky_solve(&gram, &rhs, dim, t)?;
        let intercept = (0..t)
            .map(|k| ybar[k] - (0..dim).map(|a| mu[a] * weights[a * t + k]).sum::<f64>())
            .collect();
        Ok(Self {
            dim,
            n_targets: t,
            lambda,
            weights,
            intercept,
        })
    }

    pub fn predict(&self, x: &[SparseVector]) -> Vec<f64> {
        let t = self.n_targets;
        let mut out = Vec::with_capacity(x.len() * t);
        for row in x {
            for k in 0..t {
                let s: f64 = row
                    .indices
                    .iter()
                    .zip(&row.values)
                    .map(|(&i, &v)| v * self.weights[i * t + k])
                    .sum();
                out.push(s + self.intercept[k]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_rows(rows: &[Vec<f64>]) -> Vec<SparseVector> {
        rows.iter()
            .map(|r| {
                let idx: Vec<usize> = (0..r.len()).filter(|&i| r[i] != 0.0).collect();
                SparseVector {
                    values: idx.iter().map(|&i| r[i]).collect(),
                    indices: idx,
                }
            })
            .collect()
    }

    #[test]
    fn exact_line_and_shrinkage() {
        let x = dense_rows(&[vec![1.0], vec![2.0]]);
        let w = ridge_fit(&x, 1, &[1.0, 2.0], 1, 1e-10).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
        let w = ridge_fit(&x, 1, &[1.0, 2.0], 1, 1e12).unwrap();
        assert!(w[0].abs() < 1e-10);
        assert!(ridge_fit(&x, 1, &[1.0, 2.0], 1, 0.0).is_err());
    }

    #[test]
    fn random_system_satisfies_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lambda = 0.5;
        let w = ridge_fit(&dense_rows(&rows), 10, &y, 2, lambda).unwrap();
        let mut worst: f64 = 0.0;
        for a in 0..10 {
            for k in 0..2 {
                let mut lhs = lambda * w[a * 2 + k];
                let mut rhs = 0.0;
                for (r, row) in rows.iter().enumerate() {
                    let pred: f64 = (0..10).map(|b| row[b] * w[b * 2 + k]).sum();
                    lhs += row[a] * pred;
                    rhs += row[a] * y[r * 2 + k];
                }
                worst = worst.max((lhs - rhs).abs());
            }
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn singular_system_is_a_solver_error() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(cholesky_solve(&a, &[1.0, 1.0], 2, 1), Err(ModelError::Solver(_))));
    }

    #[test]
    fn intercept_recovers_offset() {
        let x = dense_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.5, 0.0]]);
        let y: Vec<f64> = [1.0, 0.0, 1.0, 0.5].iter().map(|v| 2.0 * v + 5.0).collect();
        let m = RidgeRegressor::fit(&x, 2, &y, 1, 1e-9).unwrap();
        assert!((m.intercept[0] - 5.0).abs() < 1e-6);
        for (p, t) in m.predict(&x).iter().zip(&y) {
            assert!((p - t).abs() < 1e-6);
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..80).map(|_| (0..30).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = dense_rows(&rows);
        let a = ridge_fit(&x, 30, &y, 1, 0.1).unwrap();
        let b = par::sequential(|| ridge_fit(&x, 30, &y, 1, 0.1).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
