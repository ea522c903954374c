use std::collections::HashMap;

use super::params::{Gradients, ParameterSet};
use super::{gemm, gemm_into, Tensor, TensorError};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Cos(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    RowScale(Var, Vec<f64>),
    Sum(Var),
    MeanRows(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor,
        count: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Reverse-mode tape. Build the forward pass through its methods, then call
/// [`backward`](Graph::backward) on a scalar.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Parameter leaf; repeated requests for the same name return the same node.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var, TensorError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_owned()))?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].param = Some(name.to_owned());
        self.params.insert(name.to_owned(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = gemm(self.value(a), false, self.value(b), false);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    /// `a + row` with `row` (1×n) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        let n = av.cols();
        assert_eq!(rv.len(), n, "add_row width");
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_exact_mut(n) {
            for (v, r) in chunk.iter_mut().zip(rv.data()) {
                *v += r;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::cos);
        self.push(out, Op::Cos(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Elementwise clamp; gradient flows only where the input is strictly inside the bounds.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols rows");
                out.extend_from_slice(t.row_slice(r));
            }
        }
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        self.push(Tensor::matrix(rows, len, out), Op::SliceCols(a, start))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            out.extend_from_slice(t.row_slice(id));
        }
        self.push(
            Tensor::matrix(ids.len(), cols, out),
            Op::GatherRows(table, ids.to_vec()),
        )
    }

    /// Multiplies row `i` of `a` by the constant `factors[i]`.
    pub fn row_scale(&mut self, a: Var, factors: &[f64]) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        assert_eq!(t.rows(), factors.len(), "row_scale rows");
        let mut out = t.clone();
        for (chunk, f) in out.data_mut().chunks_exact_mut(cols).zip(factors) {
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        self.push(out, Op::RowScale(a, factors.to_vec()))
    }

    /// `mask ⊙ new + (1 - mask) ⊙ old`, row-wise.
    pub fn blend_rows(&mut self, new: Var, old: Var, mask: &[f64]) -> Var {
        let inv: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
        let a = self.row_scale(new, mask);
        let b = self.row_scale(old, &inv);
        self.add(a, b)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means as a 1×n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        self.push(Tensor::row(out), Op::MeanRows(a))
    }

    /// Mean negative log-softmax probability of the targeted class over rows whose target
    /// is `Some`. Rows with `None` contribute nothing; with no targets the loss is 0.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let t = self.value(logits);
        let (rows, cols) = (t.rows(), t.cols());
        assert_eq!(rows, targets.len(), "softmax_xent rows");
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        let mut count = 0.0;
        for r in 0..rows {
            let row = t.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            for c in 0..cols {
                probs[r * cols + c] = (row[c] - log_z).exp();
            }
            if let Some(k) = targets[r] {
                loss += log_z - row[k];
                count += 1.0;
            }
        }
        let value = if count > 0.0 { loss / count } else { 0.0 };
        self.push(
            Tensor::scalar(value),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs: Tensor::matrix(rows, cols, probs),
                count,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf on the tape.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        fn acc_gemm(grads: &mut [Option<Tensor>], v: Var, x: &Tensor, tx: bool, y: &Tensor, ty: bool) {
            match &mut grads[v.0] {
                Some(existing) => gemm_into(x, tx, y, ty, 1.0, existing),
                slot @ None => *slot = Some(gemm(x, tx, y, ty)),
            }
        }

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = &node.param {
                        out.insert(name.clone(), g);
                    }
                }
                Op::MatMul(a, b) => {
                    acc_gemm(&mut grads, *a, &g, false, self.value(*b), true);
                    acc_gemm(&mut grads, *b, self.value(*a), true, &g, false);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut gr = vec![0.0; n];
                    for chunk in g.data().chunks_exact(n) {
                        for (o, v) in gr.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    acc(&mut grads, *row, Tensor::new(shape, gr).expect("row shape"));
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Affine(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|v| v * s));
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Cos(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| -x * y.sin());
                    acc(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| 2.0 * x * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(self.value(*a), |x, y| if y > lo && y < hi { x } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut gp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + pc]);
                        }
                        acc(&mut grads, p, Tensor::matrix(rows, pc, gp));
                        offset += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let (rows, cols) = (src.rows(), src.cols());
                    let len = g.cols();
                    let mut ga = vec![0.0; rows * cols];
                    for r in 0..rows {
                        ga[r * cols + start..r * cols + start + len].copy_from_slice(g.row_slice(r));
                    }
                    acc(&mut grads, *a, Tensor::matrix(rows, cols, ga));
                }
                Op::GatherRows(table, ids) => {
                    let src = self.value(*table);
                    let cols = src.cols();
                    let mut gt = Tensor::zeros(src.shape());
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id * cols..(id + 1) * cols];
                        for (d, v) in dst.iter_mut().zip(g.row_slice(i)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::RowScale(a, factors) => {
                    let cols = g.cols();
                    let mut ga = g.clone();
                    for (chunk, f) in ga.data_mut().chunks_exact_mut(cols).zip(factors) {
                        chunk.iter_mut().for_each(|v| *v *= f);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    let shape = self.value(*a).shape().to_vec();
                    acc(&mut grads, *a, Tensor::full(&shape, s));
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let (rows, cols) = (src.rows(), src.cols());
                    let mut ga = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] = g.data()[c] / rows as f64;
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(src.shape().to_vec(), ga).expect("shape"));
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let cols = probs.cols();
                    let mut gl = Tensor::zeros(probs.shape());
                    if *count > 0.0 {
                        let s = g.item() / count;
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(k) = t {
                                let dst = &mut gl.data_mut()[r * cols..(r + 1) * cols];
                                for (d, p) in dst.iter_mut().zip(probs.row_slice(r)) {
                                    *d = s * p;
                                }
                                dst[*k] -= s;
                            }
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
        }
        out
    }
}
