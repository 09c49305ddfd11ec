use std::collections::HashMap;

use super::matrix::gemm;
use super::{GradStore, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    /// `a * b^T`
    MatMulBt(usize, usize),
    Add(usize, usize),
    /// Broadcasts a `1 x n` row over every row of the left operand.
    AddRow(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Matrix),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Gather(usize, Vec<Option<usize>>),
    StackRows(Vec<usize>),
    CrossEntropy {
        logits: usize,
        targets: Vec<(usize, usize)>,
        probs: Matrix,
        denom: f64,
    },
    SumProduct(usize, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run computation graph. Every operation appends a node holding
/// its forward value; [`Graph::backward_into`] walks the nodes in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn map(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_vec(a.rows(), a.cols(), a.data().iter().map(|x| f(*x)).collect())
}

/// Row-wise softmax; with `causal`, row `i` only spans columns `0..=i`.
pub(crate) fn softmax_rows(x: &Matrix, causal: bool) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let width = if causal { (r + 1).min(x.cols()) } else { x.cols() };
        let src = &x.row(r)[..width];
        let dst = &mut out.row_mut(r)[..width];
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Row-wise log-softmax over all columns.
pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let src = x.row(r);
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + src.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        for (d, s) in out.row_mut(r).iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    out
}

fn accumulate<'a>(grads: &'a mut [Option<Matrix>], idx: usize, shape: (usize, usize)) -> &'a mut Matrix {
    grads[idx].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Trainable leaf. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn ensure_finite(&self, v: Var, layer: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(layer.to_owned()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::MatMul(a.0, b.0), ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut value = Matrix::zeros(va.rows(), vb.rows());
        gemm(va, false, vb, true, &mut value, 1.0, 0.0);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::MatMulBt(a.0, b.0), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Add(a.0, b.0), ng)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut value = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows(), b.cols()), (1, value.cols()), "bias must be 1 x cols");
        for r in 0..value.rows() {
            for (v, x) in value.row_mut(r).iter_mut().zip(b.row(0)) {
                *v += x;
            }
        }
        let ng = self.needs(a.0) || self.needs(bias.0);
        self.push(value, Op::AddRow(a.0, bias.0), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Mul(a.0, b.0), ng)
    }

    /// Elementwise product with a constant (dropout masks, row masks).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let value = zip_map(self.value(a), &mask, |x, y| x * y);
        let ng = self.needs(a.0);
        self.push(value, Op::MulConst(a.0, mask), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = map(self.value(a), |x| x * s);
        let ng = self.needs(a.0);
        self.push(value, Op::Scale(a.0, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.needs(a.0);
        self.push(value, Op::Sigmoid(a.0), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = map(self.value(a), f64::tanh);
        let ng = self.needs(a.0);
        self.push(value, Op::Tanh(a.0), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |x| x.max(0.0));
        let ng = self.needs(a.0);
        self.push(value, Op::Relu(a.0), ng)
    }

    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let value = softmax_rows(self.value(a), causal);
        let ng = self.needs(a.0);
        self.push(value, Op::Softmax(a.0), ng)
    }

    /// Row-wise layer normalisation with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        assert_eq!(g.len(), cols);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let src = xv.row(r);
            let mean = src.iter().sum::<f64>() / cols as f64;
            let var = src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (src[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        let ng = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p);
                assert_eq!(src.rows(), rows, "concat row mismatch");
                value.row_mut(r)[off..off + src.cols()].copy_from_slice(src.row(r));
                off += src.cols();
            }
        }
        let ng = parts.iter().any(|p| self.needs(p.0));
        self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let src = self.value(a);
        assert!(start + width <= src.cols());
        let mut value = Matrix::zeros(src.rows(), width);
        for r in 0..src.rows() {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..start + width]);
        }
        let ng = self.needs(a.0);
        self.push(value, Op::SliceCols(a.0, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let src = self.value(a);
        assert!(start + count <= src.rows());
        let cols = src.cols();
        let value = Matrix::from_vec(count, cols, src.data()[start * cols..(start + count) * cols].to_vec());
        let ng = self.needs(a.0);
        self.push(value, Op::SliceRows(a.0, start), ng)
    }

    /// Row lookup; `None` yields a zero row. The gradient scatter-adds back
    /// into the selected rows.
    pub fn gather(&mut self, table: Var, ids: Vec<Option<usize>>) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (r, id) in ids.iter().enumerate() {
            if let Some(id) = id {
                value.row_mut(r).copy_from_slice(t.row(*id));
            }
        }
        let ng = self.needs(table.0);
        self.push(value, Op::Gather(table.0, ids), ng)
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.cols(), cols, "stack column mismatch");
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|p| self.needs(p.0));
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::StackRows(parts.iter().map(|p| p.0).collect()),
            ng,
        )
    }

    /// `-sum(log softmax(logits)[row, class]) / denom` as a `1 x 1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize)>, denom: f64) -> Var {
        let lv = self.value(logits);
        let logp = log_softmax_rows(lv);
        let loss: f64 = -targets.iter().map(|&(r, c)| logp.get(r, c)).sum::<f64>() / denom;
        let probs = map(&logp, f64::exp);
        let ng = self.needs(logits.0);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits: logits.0,
                targets,
                probs,
                denom,
            },
            ng,
        )
    }

    /// `sum(a .* w)` as a `1 x 1` node.
    pub fn sum_product(&mut self, a: Var, w: Matrix) -> Var {
        let s = zip_map(self.value(a), &w, |x, y| x * y).data().iter().sum();
        let ng = self.needs(a.0);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumProduct(a.0, w), ng)
    }

    /// Back-propagates from a scalar node and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut GradStore) {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        let lv = self.value(loss);
        grads[loss.0] = Some(Matrix::filled(lv.rows(), lv.cols(), 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let shape = |j: usize| self.nodes[j].value.shape();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => store.get_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = accumulate(&mut grads, *a, shape(*a));
                        gemm(&g, false, &self.nodes[*b].value, true, da, 1.0, 1.0);
                    }
                    if self.needs(*b) {
                        let db = accumulate(&mut grads, *b, shape(*b));
                        gemm(&self.nodes[*a].value, true, &g, false, db, 1.0, 1.0);
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.needs(*a) {
                        let da = accumulate(&mut grads, *a, shape(*a));
                        gemm(&g, false, &self.nodes[*b].value, false, da, 1.0, 1.0);
                    }
                    if self.needs(*b) {
                        let db = accumulate(&mut grads, *b, shape(*b));
                        gemm(&g, true, &self.nodes[*a].value, false, db, 1.0, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    for j in [*a, *b] {
                        if self.needs(j) {
                            accumulate(&mut grads, j, shape(j)).add_assign(&g);
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, shape(*a)).add_assign(&g);
                    }
                    if self.needs(*bias) {
                        let db = accumulate(&mut grads, *bias, shape(*bias));
                        for r in 0..g.rows() {
                            for (d, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, shape(*a)).add_assign(&zip_map(&g, vb, |x, y| x * y));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, shape(*b)).add_assign(&zip_map(&g, va, |x, y| x * y));
                    }
                }
                Op::MulConst(a, m) => {
                    accumulate(&mut grads, *a, shape(*a)).add_assign(&zip_map(&g, m, |x, y| x * y));
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, shape(*a)).add_assign(&map(&g, |x| x * s));
                }
                Op::Sigmoid(a) => {
                    let d = zip_map(&g, &node.value, |x, y| x * y * (1.0 - y));
                    accumulate(&mut grads, *a, shape(*a)).add_assign(&d);
                }
                Op::Tanh(a) => {
                    let d = zip_map(&g, &node.value, |x, y| x * (1.0 - y * y));
                    accumulate(&mut grads, *a, shape(*a)).add_assign(&d);
                }
                Op::Relu(a) => {
                    let d = zip_map(&g, &node.value, |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, shape(*a)).add_assign(&d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let da = accumulate(&mut grads, *a, shape(*a));
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((d, p), q) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d += p * (q - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = xhat.shape();
                    let gam = self.nodes[*gamma].value.row(0).to_vec();
                    if self.needs(*gamma) {
                        let dg = accumulate(&mut grads, *gamma, (1, cols));
                        for r in 0..rows {
                            for c in 0..cols {
                                dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                            }
                        }
                    }
                    if self.needs(*beta) {
                        let db = accumulate(&mut grads, *beta, (1, cols));
                        for r in 0..rows {
                            for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                    if self.needs(*x) {
                        let dx = accumulate(&mut grads, *x, (rows, cols));
                        let nf = cols as f64;
                        let mut dxhat = vec![0.0; cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                dxhat[c] = g.get(r, c) * gam[c];
                            }
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                            let inv = inv_std[r];
                            for c in 0..cols {
                                let v = inv / nf * (nf * dxhat[c] - sum - xhat.get(r, c) * dot);
                                dx.data_mut()[r * cols + c] += v;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = shape(*p).1;
                        if self.needs(*p) {
                            let dp = accumulate(&mut grads, *p, shape(*p));
                            for r in 0..g.rows() {
                                for (d, v) in dp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                    *d += v;
                                }
                            }
                        }
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let da = accumulate(&mut grads, *a, shape(*a));
                    for r in 0..g.rows() {
                        for (d, v) in da.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let da = accumulate(&mut grads, *a, shape(*a));
                    let off = start * g.cols();
                    for (d, v) in da.data_mut()[off..off + g.len()].iter_mut().zip(g.data()) {
                        *d += v;
                    }
                }
                Op::Gather(table, ids) => {
                    let dt = accumulate(&mut grads, *table, shape(*table));
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(id) = id {
                            for (d, v) in dt.row_mut(*id).iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (rows, cols) = shape(*p);
                        if self.needs(*p) {
                            let dp = accumulate(&mut grads, *p, (rows, cols));
                            for (d, v) in dp.data_mut().iter_mut().zip(&g.data()[off * cols..(off + rows) * cols]) {
                                *d += v;
                            }
                        }
                        off += rows;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    denom,
                } => {
                    let s = g.get(0, 0) / denom;
                    let dl = accumulate(&mut grads, *logits, shape(*logits));
                    for &(r, c) in targets {
                        for (d, p) in dl.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *d += s * p;
                        }
                        dl.data_mut()[r * probs.cols() + c] -= s;
                    }
                }
                Op::SumProduct(a, w) => {
                    let s = g.get(0, 0);
                    accumulate(&mut grads, *a, shape(*a)).add_assign(&map(w, |x| x * s));
                }
            }
        }
    }
}
