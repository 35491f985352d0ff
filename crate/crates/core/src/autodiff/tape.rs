use super::kernels::{matmul_nt, matmul_tn};
use super::{AutodiffError, ParamId, ParamStore, Result, Tensor};
use std::collections::HashMap;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    Embedding { table: Var, ids: Vec<usize> },
    Reshape(Var),
    Transpose(Var),
    Mean(Var),
    Mse(Var, Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// [`Tape::backward`] walks the node list once in reverse. Gradients of leaf
/// nodes (variables and parameters) accumulate across `backward` calls until
/// [`Tape::reset`]. Frozen parameters and constants never receive a gradient.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, ParamId>,
    accum: HashMap<usize, Tensor>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }
}

fn shape_err(op: &str, detail: String) -> AutodiffError {
    AutodiffError::Shape(format!("{op}: {detail}"))
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).unwrap()
}

pub(crate) fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and accumulated gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.accum.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that receives gradients.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records the current value of a stored parameter. Frozen parameters
    /// enter the tape as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.tensor.clone(), Op::Leaf, p.trainable);
        self.params.insert(v.0, id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of equal shapes, or `[m,n] + [n]` / `[m,n] + [1,n]`
    /// with the right operand broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let out = av.add(bv)?;
            let rg = self.rg(a) || self.rg(b);
            return Ok(self.push(out, Op::Add(a, b), rg));
        }
        let (m, n) = av.dims2().map_err(|_| shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())))?;
        let row_ok = bv.numel() == n && (bv.shape().len() == 1 || bv.shape() == [1, n]);
        if !row_ok {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.data().to_vec();
        for r in 0..m {
            for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::AddRow(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("sub", format!("{:?} - {:?}", av.shape(), bv.shape())));
        }
        let out = Tensor::new(av.shape(), av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect())?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", format!("{:?} * {:?}", av.shape(), bv.shape())));
        }
        let out = Tensor::new(av.shape(), av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect())?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = map(self.value(a), |x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Elementwise logistic function, evaluated without overflow for any
    /// finite input.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), sigmoid_scalar);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mx).exp();
                s += *o;
            }
            out[r * n..(r + 1) * n].iter_mut().for_each(|o| *o /= s);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::SoftmaxRows(a), rg))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let m = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(shape_err("concat", format!("row counts {m} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                out[r * total + col..r * total + col + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&[m, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Gathers rows of `table[V,d]`, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(AutodiffError::Bounds { index: bad, len: v });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(&[ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Mean squared error between equal-shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = p.numel() as f64;
        let v = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(v), Op::Mse(pred, target), rg))
    }

    /// Mean negative log-softmax probability of `targets` under row-wise
    /// `logits[n,V]`, stabilized by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, v) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(shape_err("cross_entropy", format!("{n} rows but {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(AutodiffError::Bounds { index: bad, len: v });
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &x[r * v..(r + 1) * v];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln() + mx;
            loss += lse - row[targets[r]];
            for (p, &z) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Propagates from a scalar `loss` and returns the accumulated leaf
    /// gradients. Calling it again without [`Tape::reset`] adds a second
    /// contribution to every leaf gradient.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.dims2()?;
                    let n = bv.dims2()?.1;
                    if self.rg(*a) {
                        acc(&mut grads, *a, matmul_nt(&g, bv.data(), m, n, k));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, matmul_tn(av.data(), &g, m, k, n));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, b) => {
                    let (m, n) = out.dims2()?;
                    if self.rg(*b) {
                        let mut gb = vec![0.0; n];
                        for r in 0..m {
                            gb.iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(s, x)| *s += x);
                        }
                        acc(&mut grads, *b, gb);
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        acc(&mut grads, *b, g.iter().map(|x| -x).collect());
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.iter().map(|x| x * c).collect()),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => acc(
                    &mut grads,
                    *a,
                    g.iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y)).collect(),
                ),
                Op::Relu(a) => acc(
                    &mut grads,
                    *a,
                    g.iter()
                        .zip(self.value(*a).data())
                        .map(|(x, z)| if *z > 0.0 { *x } else { 0.0 })
                        .collect(),
                ),
                Op::Sigmoid(a) => acc(
                    &mut grads,
                    *a,
                    g.iter().zip(out.data()).map(|(x, y)| x * y * (1.0 - y)).collect(),
                ),
                Op::SoftmaxRows(a) => {
                    let (m, n) = out.dims2()?;
                    let y = out.data();
                    let mut ga = vec![0.0; m * n];
                    for r in 0..m {
                        let s = r * n..(r + 1) * n;
                        let dot: f64 = s.clone().map(|i| g[i] * y[i]).sum();
                        for i in s {
                            ga[i] = y[i] * (g[i] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = out.dims2()?;
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).dims2()?.1;
                        if self.rg(*p) {
                            let mut gp = Vec::with_capacity(m * w);
                            for r in 0..m {
                                gp.extend_from_slice(&g[r * total + col..r * total + col + w]);
                            }
                            acc(&mut grads, *p, gp);
                        }
                        col += w;
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = out.dims2()?.1;
                    let mut gt = vec![0.0; self.value(*table).numel()];
                    for (pos, &i) in ids.iter().enumerate() {
                        gt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[pos * d..(pos + 1) * d])
                            .for_each(|(s, x)| *s += x);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Reshape(a) => acc(&mut grads, *a, g),
                Op::Transpose(a) => {
                    let (r, c) = out.dims2()?;
                    let gt = Tensor::new(&[r, c], g)?.transpose()?;
                    acc(&mut grads, *a, gt.into_data());
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    acc(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                    let scale = 2.0 * g[0] / pv.len() as f64;
                    let d: Vec<f64> = pv.iter().zip(tv).map(|(a, b)| scale * (a - b)).collect();
                    if self.rg(*t) {
                        acc(&mut grads, *t, d.iter().map(|x| -x).collect());
                    }
                    if self.rg(*p) {
                        acc(&mut grads, *p, d);
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let v = self.value(*logits).dims2()?.1;
                    let n = targets.len() as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * g[0] / n).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        gl[r * v + t] -= g[0] / n;
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
        }

        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let shape = self.nodes[idx].value.shape().to_vec();
            match self.accum.get_mut(&idx) {
                Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(e, x)| *e += x),
                None => {
                    self.accum.insert(idx, Tensor::new(&shape, g)?);
                }
            }
        }
        Ok(self.gradients())
    }

    /// Snapshot of the accumulated leaf gradients.
    pub fn gradients(&self) -> Gradients {
        let mut out = Gradients::default();
        for (&idx, t) in &self.accum {
            out.by_node.insert(idx, t.clone());
            if let Some(&pid) = self.params.get(&idx) {
                match out.by_param.get_mut(&pid) {
                    // The same parameter recorded twice: contributions add.
                    Some(existing) => existing
                        .data_mut()
                        .iter_mut()
                        .zip(t.data())
                        .for_each(|(e, x)| *e += x),
                    None => {
                        out.by_param.insert(pid, t.clone());
                    }
                }
            }
        }
        out
    }
}
