//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! Every primitive appends one node holding its output value and the handles
//! of its inputs. [`Tape::backward`] walks the nodes in exact reverse
//! recording order and accumulates vector-Jacobian products, so identical
//! tapes always yield bitwise-identical gradients.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Rows whose L2 norm is below this pass through normalization unchanged.
pub const NORM_GUARD: f64 = 1e-30;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    RowL2Normalize(Var, Vec<f64>),
    RowSum(Var),
    SumAll(Var),
    LogSumExpRow(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows {
        x: Var,
        idx: Arc<[usize]>,
        weights: Arc<[f64]>,
    },
    SegmentLogSumExp {
        x: Var,
        seg: Arc<[usize]>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Error {
    Error::Shape { op, left, right }
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

    /// Records an input (parameter or constant). Gradients are available for
    /// every leaf after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            return Err(shape_err("matmul", xv.shape(), wv.shape()));
        }
        let out = matmul_raw(xv, wv);
        self.push("matmul", out, Op::MatMul(x, w))
    }

    /// `x·W + b` with `b` a 1×out row broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() {
            return Err(shape_err("affine", xv.shape(), wv.shape()));
        }
        if bv.shape() != (1, wv.cols()) {
            return Err(shape_err("affine", wv.shape(), bv.shape()));
        }
        let mut out = matmul_raw(xv, wv);
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, bias) in row.iter_mut().zip(bv.data()) {
                *o += bias;
            }
        }
        self.push("affine", out, Op::Affine(x, w, b))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = Tensor::raw(xv.rows(), xv.cols(), data);
        self.push("relu", out, Op::Relu(x))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::validation("concat_cols: no inputs"))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.0 != rows {
                return Err(shape_err("concat_cols", self.shape(first), s));
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(r));
            }
        }
        self.push("concat_cols", Tensor::raw(rows, cols, data), Op::ConcatCols(xs.to_vec()))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::validation("concat_rows: no inputs"))?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let v = self.value(x);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", self.shape(first), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        self.push("concat_rows", Tensor::raw(rows, cols, data), Op::ConcatRows(xs.to_vec()))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::raw(av.rows(), av.cols(), data);
        self.push(name, out, op)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::raw(xv.rows(), xv.cols(), xv.data().iter().map(|v| v * c).collect());
        self.push("scale", out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::raw(xv.rows(), xv.cols(), xv.data().iter().map(|v| v + c).collect());
        self.push("add_scalar", out, Op::AddScalar(x))
    }

    /// Scales each row to unit L2 norm. Rows with norm below [`NORM_GUARD`]
    /// are returned unchanged.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut norms = Vec::with_capacity(xv.rows());
        let mut data = Vec::with_capacity(xv.rows() * cols);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            if norm < NORM_GUARD {
                data.extend_from_slice(row);
            } else {
                data.extend(row.iter().map(|v| v / norm));
            }
        }
        let out = Tensor::raw(xv.rows(), cols, data);
        self.push("row_l2_normalize", out, Op::RowL2Normalize(x, norms))
    }

    /// Per-row sum: n×c → n×1.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Tensor::raw(xv.rows(), 1, data);
        self.push("row_sum", out, Op::RowSum(x))
    }

    /// Sum of all entries: → 1×1.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum_all", Tensor::raw(1, 1, vec![s]), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).data().len();
        if n == 0 {
            return Err(Error::validation("mean_all: empty tensor"));
        }
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row log-sum-exp: n×c → n×1, max-shifted.
    pub fn logsumexp_row(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() == 0 {
            return Err(shape_err("logsumexp_row", xv.shape(), (xv.rows(), 1)));
        }
        let data = (0..xv.rows()).map(|r| logsumexp(xv.row(r))).collect();
        let out = Tensor::raw(xv.rows(), 1, data);
        self.push("logsumexp_row", out, Op::LogSumExpRow(x))
    }

    /// Rows of `x` at `idx`, repetitions allowed.
    pub fn gather_rows(&mut self, x: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let idx = idx.into();
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(shape_err("gather_rows", xv.shape(), (bad, xv.cols())));
        }
        let out = xv.select_rows(&idx);
        self.push("gather_rows", out, Op::GatherRows(x, idx))
    }

    /// `out[idx[k]] += weights[k] · x[k]` into an `n_out`-row zero matrix.
    pub fn scatter_add_rows(
        &mut self,
        x: Var,
        idx: impl Into<Arc<[usize]>>,
        weights: impl Into<Arc<[f64]>>,
        n_out: usize,
    ) -> Result<Var> {
        let (idx, weights) = (idx.into(), weights.into());
        let xv = self.value(x);
        if idx.len() != xv.rows() || weights.len() != xv.rows() {
            return Err(shape_err("scatter_add_rows", xv.shape(), (idx.len(), weights.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(shape_err("scatter_add_rows", (n_out, xv.cols()), (bad, xv.cols())));
        }
        let cols = xv.cols();
        let mut data = vec![0.0; n_out * cols];
        for (k, (&dst, &w)) in idx.iter().zip(weights.iter()).enumerate() {
            let src = xv.row(k);
            for (o, s) in data[dst * cols..(dst + 1) * cols].iter_mut().zip(src) {
                *o += w * s;
            }
        }
        let out = Tensor::raw(n_out, cols, data);
        self.push("scatter_add_rows", out, Op::ScatterAddRows { x, idx, weights })
    }

    /// Log-sum-exp within segments of a column vector: m×1 → n_seg×1.
    /// `seg[k]` names the segment of row `k`; every segment must be non-empty.
    pub fn segment_logsumexp(
        &mut self,
        x: Var,
        seg: impl Into<Arc<[usize]>>,
        n_seg: usize,
    ) -> Result<Var> {
        let seg = seg.into();
        let xv = self.value(x);
        if xv.cols() != 1 || seg.len() != xv.rows() {
            return Err(shape_err("segment_logsumexp", xv.shape(), (seg.len(), 1)));
        }
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_seg];
        for (k, &s) in seg.iter().enumerate() {
            if s >= n_seg {
                return Err(shape_err("segment_logsumexp", (n_seg, 1), (s, 1)));
            }
            groups[s].push(xv.data()[k]);
        }
        if groups.iter().any(Vec::is_empty) {
            return Err(Error::validation("segment_logsumexp: empty segment"));
        }
        let data = groups.iter().map(|g| logsumexp(g)).collect();
        let out = Tensor::raw(n_seg, 1, data);
        self.push("segment_logsumexp", out, Op::SegmentLogSumExp { x, seg })
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(shape_err("backward", self.shape(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::raw(1, 1, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                accumulate(grads, *x, matmul_bt(g, wv));
                accumulate(grads, *w, matmul_at(xv, g));
            }
            Op::Affine(x, w, b) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                accumulate(grads, *x, matmul_bt(g, wv));
                accumulate(grads, *w, matmul_at(xv, g));
                let mut db = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (d, v) in db.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *b, Tensor::raw(1, g.cols(), db));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::raw(xv.rows(), xv.cols(), data));
            }
            Op::ConcatCols(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let (rows, cols) = self.shape(x);
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    accumulate(grads, x, Tensor::raw(rows, cols, data));
                    offset += cols;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let (rows, cols) = self.shape(x);
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(grads, x, Tensor::raw(rows, cols, data));
                    offset += rows;
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip_map(g, bv, |x, y| x * y));
                accumulate(grads, *b, zip_map(g, av, |x, y| x * y));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, map(g, |v| -v));
            }
            Op::Scale(x, c) => accumulate(grads, *x, map(g, |v| v * c)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::RowL2Normalize(x, norms) => {
                let cols = g.cols();
                let mut data = Vec::with_capacity(g.data().len());
                for (r, &norm) in norms.iter().enumerate() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    if norm < NORM_GUARD {
                        data.extend_from_slice(gr);
                    } else {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        data.extend(gr.iter().zip(yr).map(|(gv, yv)| (gv - yv * dot) / norm));
                    }
                }
                accumulate(grads, *x, Tensor::raw(norms.len(), cols, data));
            }
            Op::RowSum(x) => {
                let (rows, cols) = self.shape(*x);
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    data.extend(std::iter::repeat_n(g.data()[r], cols));
                }
                accumulate(grads, *x, Tensor::raw(rows, cols, data));
            }
            Op::SumAll(x) => {
                let (rows, cols) = self.shape(*x);
                accumulate(grads, *x, Tensor::raw(rows, cols, vec![g.data()[0]; rows * cols]));
            }
            Op::LogSumExpRow(x) => {
                let xv = self.value(*x);
                let mut data = Vec::with_capacity(xv.data().len());
                for r in 0..xv.rows() {
                    let lse = out.data()[r];
                    data.extend(xv.row(r).iter().map(|v| g.data()[r] * (v - lse).exp()));
                }
                accumulate(grads, *x, Tensor::raw(xv.rows(), xv.cols(), data));
            }
            Op::GatherRows(x, idx) => {
                let (rows, cols) = self.shape(*x);
                let mut data = vec![0.0; rows * cols];
                for (k, &src) in idx.iter().enumerate() {
                    for (d, v) in data[src * cols..(src + 1) * cols].iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, Tensor::raw(rows, cols, data));
            }
            Op::ScatterAddRows { x, idx, weights } => {
                let (rows, cols) = self.shape(*x);
                let mut data = Vec::with_capacity(rows * cols);
                for (&dst, &w) in idx.iter().zip(weights.iter()) {
                    data.extend(g.row(dst).iter().map(|v| w * v));
                }
                accumulate(grads, *x, Tensor::raw(rows, cols, data));
            }
            Op::SegmentLogSumExp { x, seg } => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(seg.iter())
                    .map(|(v, &s)| g.data()[s] * (v - out.data()[s]).exp())
                    .collect();
                accumulate(grads, *x, Tensor::raw(xv.rows(), 1, data));
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::raw(t.rows(), t.cols(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::raw(a.rows(), a.cols(), data)
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `a · b`.
pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    debug_assert_eq!(k, b.rows());
    Tensor::raw(n, m, out)
}

/// `g · bᵀ`.
fn matmul_bt(g: &Tensor, b: &Tensor) -> Tensor {
    let (n, m, k) = (g.rows(), g.cols(), b.rows());
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = g.row(i);
        for p in 0..k {
            out[i * k + p] = grow.iter().zip(b.row(p)).map(|(x, y)| x * y).sum();
        }
    }
    debug_assert_eq!(m, b.cols());
    Tensor::raw(n, k, out)
}

/// `aᵀ · g`.
fn matmul_at(a: &Tensor, g: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), g.cols());
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = g.row(i);
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * m..(p + 1) * m].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    Tensor::raw(k, m, out)
}
