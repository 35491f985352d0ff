//! Dense matrix kernels. Output rows are computed independently with a fixed
//! inner summation order, so parallel and sequential runs agree bit for bit.

use crate::par;

const PAR_THRESHOLD: usize = 1 << 15;

fn rows_into(out: &mut [f64], m: usize, n: usize, work: usize, row: impl Fn(usize, &mut [f64]) + Send + Sync) {
    if n == 0 {
        return;
    }
    if work >= PAR_THRESHOLD && m > 1 {
        par::for_each_chunk_mut(out, n, row);
    } else {
        out.chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
    }
}

/// `a[m,k] · b[k,n]`
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    rows_into(&mut out, m, n, m * k * n, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `a[m,k] · b[n,k]ᵀ`
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    rows_into(&mut out, m, n, m * k * n, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            *o = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// `a[m,k]ᵀ · g[m,n]`, giving `[k,n]`.
pub fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    rows_into(&mut out, k, n, m * k * n, |p, row| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let gr = &g[i * n..(i + 1) * n];
            for (o, &gv) in row.iter_mut().zip(gr) {
                *o += av * gv;
            }
        }
    });
    out
}
