use std::sync::Arc;

use super::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Prelu(Var, Var),
    Sigmoid(Var),
    /// Saved per-row norms after clamping.
    L2NormalizeRows(Var, Vec<f64>),
    RowWeightedSum(Arc<Vec<f64>>, Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Gram(Var),
    LogSumExpRows(Var, Arc<Vec<bool>>),
    WeightedSum(Var, Arc<Tensor>),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "spmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::Prelu(..) => "prelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::L2NormalizeRows(..) => "l2_normalize_rows",
            Op::RowWeightedSum(..) => "row_weighted_sum",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::Gram(..) => "dot_products_matrix",
            Op::LogSumExpRows(..) => "log_sum_exp",
            Op::WeightedSum(..) => "weighted_sum",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Rows with a smaller norm are scaled by `1 / NORM_FLOOR` instead.
const NORM_FLOOR: f64 = 1e-12;

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in evaluation order, so the record is always a
/// topologically sorted DAG.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registered parameters in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.constant(t);
        self.params.push(v);
        v
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    pub fn spmm(&mut self, s: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = s.mul_dense(self.value(x))?;
        self.push(out, Op::SpMM(s, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = va.zip_map(vb, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("sub", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = va.zip_map(vb, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    /// `x + 1 * bias` where `bias` is a `1 x cols` row added to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(shape_err(
                "add_row_bias",
                format!("bias {:?} for input {:?}", vb.shape(), vx.shape()),
            ));
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRowBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k))
    }

    /// Parametric ReLU with a single learned `1 x 1` slope shared by all entries.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let vs = self.value(slope);
        if vs.shape() != (1, 1) {
            return Err(shape_err("prelu", format!("slope shape {:?}", vs.shape())));
        }
        let a = vs.item();
        let out = self.value(x).map(|v| if v > 0.0 { v } else { a * v });
        self.push(out, Op::Prelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        self.push(out, Op::Sigmoid(x))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let mut out = vx.clone();
        let mut norms = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let n = vx.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            for o in out.row_mut(r) {
                *o /= n;
            }
            norms.push(n);
        }
        self.push(out, Op::L2NormalizeRows(x, norms))
    }

    /// `w^T x` for constant weights `w` (one per row of `x`), giving a `1 x cols` row.
    pub fn row_weighted_sum(&mut self, weights: Arc<Vec<f64>>, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if weights.len() != vx.rows() {
            return Err(shape_err(
                "row_weighted_sum",
                format!("{} weights for {} rows", weights.len(), vx.rows()),
            ));
        }
        let mut out = Tensor::zeros(1, vx.cols());
        for (r, w) in weights.iter().enumerate() {
            for (o, v) in out.data_mut().iter_mut().zip(vx.row(r)) {
                *o += w * v;
            }
        }
        self.push(out, Op::RowWeightedSum(weights, x))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&r) = rows.iter().find(|&&r| r >= vx.rows()) {
            return Err(shape_err("gather_rows", format!("row {r} of {}", vx.rows())));
        }
        let mut data = Vec::with_capacity(rows.len() * vx.cols());
        for &r in &rows {
            data.extend_from_slice(vx.row(r));
        }
        let out = Tensor::new(rows.len(), vx.cols(), data)?;
        self.push(out, Op::GatherRows(x, rows))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", format!("{} vs {} columns", v.cols(), cols)));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Pairwise dot products `H H^T`.
    pub fn dot_products_matrix(&mut self, h: Var) -> Result<Var> {
        let vh = self.value(h);
        let out = vh.matmul_t(vh)?;
        self.push(out, Op::Gram(h))
    }

    /// Row-wise `log sum exp` over the entries where `mask` is true; returns a column.
    ///
    /// Each row subtracts its masked maximum first, so large logits do not overflow.
    pub fn log_sum_exp_rows(&mut self, x: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let vx = self.value(x);
        if mask.len() != vx.len() {
            return Err(shape_err(
                "log_sum_exp",
                format!("mask of {} for {:?}", mask.len(), vx.shape()),
            ));
        }
        let cols = vx.cols();
        let mut out = Tensor::zeros(vx.rows(), 1);
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .fold(f64::NEG_INFINITY, |a, (&v, _)| a.max(v));
            let s: f64 = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| (v - max).exp())
                .sum();
            out.set(r, 0, max + s.ln());
        }
        self.push(out, Op::LogSumExpRows(x, mask))
    }

    /// `sum(x * c)` for a constant coefficient tensor `c`.
    pub fn weighted_sum(&mut self, x: Var, coeffs: Arc<Tensor>) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape() != coeffs.shape() {
            return Err(shape_err(
                "weighted_sum",
                format!("{:?} vs {:?}", vx.shape(), coeffs.shape()),
            ));
        }
        let s = vx.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum(x, coeffs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Reverse-mode pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(shape_err("backward", format!("loss has shape {shape:?}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::SpMM(s, x) => {
                    acc(&mut grads, *x, s.transpose_mul_dense(&g)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::AddRowBias(x, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *bias, gb);
                    acc(&mut grads, *x, g);
                }
                Op::Scale(x, k) => {
                    acc(&mut grads, *x, g.map(|v| v * k));
                }
                Op::Prelu(x, slope) => {
                    let a = self.value(*slope).item();
                    let vx = self.value(*x);
                    let gx = vx.zip_map(&g, |xv, gv| if xv > 0.0 { gv } else { a * gv });
                    let ga: f64 = vx
                        .data()
                        .iter()
                        .zip(g.data())
                        .filter(|(&xv, _)| xv <= 0.0)
                        .map(|(xv, gv)| xv * gv)
                        .sum();
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *slope, Tensor::scalar(ga));
                }
                Op::Sigmoid(x) => {
                    let gx = node.value.zip_map(&g, |y, gv| gv * y * (1.0 - y));
                    acc(&mut grads, *x, gx);
                }
                Op::L2NormalizeRows(x, norms) => {
                    // d(x/|x|) = (I - y y^T) g / |x|
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let clamped = n <= NORM_FLOOR;
                        let proj: f64 = if clamped {
                            0.0
                        } else {
                            yr.iter().zip(gr).map(|(a, b)| a * b).sum()
                        };
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * proj) / n;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::RowWeightedSum(w, x) => {
                    let cols = g.cols();
                    let mut gx = Tensor::zeros(w.len(), cols);
                    for (r, wv) in w.iter().enumerate() {
                        for (o, gv) in gx.row_mut(r).iter_mut().zip(g.data()) {
                            *o = wv * gv;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::GatherRows(x, rows) => {
                    let vx = self.value(*x);
                    let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, gv) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let slice = g.data()[start * c..(start + r) * c].to_vec();
                        acc(&mut grads, *p, Tensor::new(r, c, slice)?);
                        start += r;
                    }
                }
                Op::Gram(h) => {
                    // d(H H^T) = (G + G^T) H
                    let sym = g.zip_map(&g.transpose(), |a, b| a + b);
                    acc(&mut grads, *h, sym.matmul(self.value(*h))?);
                }
                Op::LogSumExpRows(x, mask) => {
                    let vx = self.value(*x);
                    let cols = vx.cols();
                    let mut gx = Tensor::zeros(vx.rows(), cols);
                    for r in 0..vx.rows() {
                        let lse = node.value.get(r, 0);
                        let gv = g.get(r, 0);
                        let m = &mask[r * cols..(r + 1) * cols];
                        for ((o, &v), &keep) in gx.row_mut(r).iter_mut().zip(vx.row(r)).zip(m) {
                            if keep {
                                *o = gv * (v - lse).exp();
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::WeightedSum(x, c) => {
                    let gv = g.item();
                    acc(&mut grads, *x, c.map(|v| v * gv));
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    acc(&mut grads, *x, Tensor::filled(r, c, g.item()));
                }
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}
