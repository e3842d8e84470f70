//! Define-by-run reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records every op as it executes. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] walks it once in reverse.

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use super::NumericsError;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    RowDot(Var, Var),
    Mask(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mse(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, NumericsError> {
        self.push("constant", t, Op::Leaf)
    }

    /// Binds a stored parameter. Binding the same id twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, NumericsError> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let v = self.push("param", store.get(id).clone(), Op::Param(id))?;
        self.bound.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", x, y));
        }
        let mut out = Tensor::zeros(x.rows(), y.cols());
        gemm(1.0, x, false, y, false, 0.0, &mut out);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (a, b) = (self.value(x), self.value(row));
        if b.rows() != 1 || b.cols() != a.cols() {
            return Err(shape_err("add_row", a, b));
        }
        let mut out = a.clone();
        let c = a.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % c];
        }
        self.push("add_row", out, Op::AddRow(x, row))
    }

    /// Multiplies row `i` of `x` by entry `i` of the `r×1` column `s`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        let (a, b) = (self.value(x), self.value(s));
        if b.cols() != 1 || b.rows() != a.rows() {
            return Err(shape_err("mul_col", a, b));
        }
        let mut out = a.clone();
        let c = a.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= b.data()[i / c];
        }
        self.push("mul_col", out, Op::MulCol(x, s))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var, NumericsError> {
        let out = self.value(x).map(|v| v * alpha);
        self.push("scale", out, Op::Scale(x, alpha))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = self.value(x).map(|v| 1.0 - v);
        self.push("one_minus", out, Op::OneMinus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = self.value(x).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(x))
    }

    /// Softmax over each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let a = self.value(x);
        if a.cols() == 0 {
            return Err(NumericsError::Empty("softmax"));
        }
        let mut out = a.clone();
        let c = a.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push("softmax", out, Op::SoftmaxRows(x))
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat"))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push("concat", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let a = self.value(x);
        if start > end || end > a.cols() {
            return Err(NumericsError::Slice {
                shape: a.shape(),
                start,
                end,
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(a.rows() * w);
        for r in 0..a.rows() {
            data.extend_from_slice(&a.row(r)[start..end]);
        }
        let out = Tensor::new(a.rows(), w, data)?;
        self.push("slice", out, Op::SliceCols(x, start))
    }

    /// Per-row inner product, giving an `r×1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        let out = Tensor::new(x.rows(), 1, data)?;
        self.push("row_dot", out, Op::RowDot(a, b))
    }

    /// Inverted dropout: identity unless `train`, otherwise each entry is
    /// zeroed with probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, NumericsError> {
        if !train || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(NumericsError::Probability(p));
        }
        let keep = 1.0 / (1.0 - p);
        let a = self.value(x);
        let mask: Vec<f64> = (0..a.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = a.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(a.rows(), a.cols(), data)?;
        self.push("dropout", out, Op::Mask(x, mask))
    }

    /// Embedding lookup. `indices` holds `rows * slots` entries; output row
    /// `i` is the concatenation of table rows `indices[i*slots..(i+1)*slots]`.
    pub fn gather(&mut self, table: Var, indices: &[usize], slots: usize) -> Result<Var, NumericsError> {
        let t = self.value(table);
        if slots == 0 || !indices.len().is_multiple_of(slots) {
            return Err(NumericsError::Empty("gather"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(NumericsError::Index {
                index: bad,
                rows: t.rows(),
            });
        }
        let rows = indices.len() / slots;
        let d = t.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(rows, slots * d, data)?;
        self.push("gather", out, Op::Gather(table, indices.to_vec()))
    }

    /// Sum of all entries as a 1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    /// Mean squared difference to a constant target, as a 1×1 tensor.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var, NumericsError> {
        let a = self.value(x);
        if a.shape() != target.shape() {
            return Err(shape_err("mse", a, target));
        }
        if a.is_empty() {
            return Err(NumericsError::Empty("mse"));
        }
        let n = a.len() as f64;
        let v = a.data().iter().zip(target.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
        self.push("mse", Tensor::scalar(v), Op::Mse(x, target.clone()))
    }

    /// Gradients of the scalar `loss` with respect to every parameter in
    /// `store`, in store order. Parameters that do not reach `loss` get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Vec<Tensor>, NumericsError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(NumericsError::NonScalarLoss(lv.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out[id.index()].add_scaled(&g, 1.0),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, av);
                    gemm(1.0, &g, false, bv, true, 1.0, ga);
                    let gb = slot(&mut grads, *b, bv);
                    gemm(1.0, av, true, &g, false, 1.0, gb);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, &g).add_scaled(&g, 1.0);
                    slot(&mut grads, *b, &g).add_scaled(&g, 1.0);
                }
                Op::Sub(a, b) => {
                    slot(&mut grads, *a, &g).add_scaled(&g, 1.0);
                    slot(&mut grads, *b, &g).add_scaled(&g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    slot(&mut grads, *a, av).add_scaled(&zip_with(&g, bv, |p, q| p * q), 1.0);
                    slot(&mut grads, *b, bv).add_scaled(&zip_with(&g, av, |p, q| p * q), 1.0);
                }
                Op::AddRow(x, row) => {
                    slot(&mut grads, *x, &g).add_scaled(&g, 1.0);
                    let c = g.cols();
                    let gr = slot(&mut grads, *row, self.value(*row));
                    for (k, v) in g.data().iter().enumerate() {
                        gr.data_mut()[k % c] += v;
                    }
                }
                Op::MulCol(x, s) => {
                    let (xv, sv) = (self.value(*x), self.value(*s));
                    let c = g.cols();
                    let gx = slot(&mut grads, *x, xv);
                    for (k, v) in g.data().iter().enumerate() {
                        gx.data_mut()[k] += v * sv.data()[k / c];
                    }
                    let gs = slot(&mut grads, *s, sv);
                    for (k, v) in g.data().iter().enumerate() {
                        gs.data_mut()[k / c] += v * xv.data()[k];
                    }
                }
                Op::Scale(x, alpha) => slot(&mut grads, *x, &g).add_scaled(&g, *alpha),
                Op::OneMinus(x) => slot(&mut grads, *x, &g).add_scaled(&g, -1.0),
                Op::Sigmoid(x) => {
                    let d = zip_with(&g, y, |p, s| p * s * (1.0 - s));
                    slot(&mut grads, *x, &g).add_scaled(&d, 1.0);
                }
                Op::Tanh(x) => {
                    let d = zip_with(&g, y, |p, t| p * (1.0 - t * t));
                    slot(&mut grads, *x, &g).add_scaled(&d, 1.0);
                }
                Op::SoftmaxRows(x) => {
                    let c = y.cols();
                    let gx = slot(&mut grads, *x, &g);
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx.data_mut()[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols();
                        let gp = slot(&mut grads, *p, pv);
                        for r in 0..g.rows() {
                            let src = &g.row(r)[offset..offset + w];
                            for (dst, s) in gp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *dst += s;
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(x, start) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let gx = slot(&mut grads, *x, xv);
                    for r in 0..g.rows() {
                        for (j, s) in g.row(r).iter().enumerate() {
                            gx.data_mut()[r * c + start + j] += s;
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let c = av.cols();
                    let ga = slot(&mut grads, *a, av);
                    for (k, v) in ga.data_mut().iter_mut().enumerate() {
                        *v += g.data()[k / c] * bv.data()[k];
                    }
                    let gb = slot(&mut grads, *b, bv);
                    for (k, v) in gb.data_mut().iter_mut().enumerate() {
                        *v += g.data()[k / c] * av.data()[k];
                    }
                }
                Op::Mask(x, mask) => {
                    let gx = slot(&mut grads, *x, &g);
                    for ((v, s), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *v += s * m;
                    }
                }
                Op::Gather(table, indices) => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let gt = slot(&mut grads, *table, tv);
                    for (k, &idx) in indices.iter().enumerate() {
                        let src = &g.data()[k * d..(k + 1) * d];
                        for (dst, s) in gt.data_mut()[idx * d..(idx + 1) * d].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                }
                Op::Sum(x) => {
                    let s = g.item();
                    let gx = slot(&mut grads, *x, self.value(*x));
                    for v in gx.data_mut() {
                        *v += s;
                    }
                }
                Op::Mse(x, target) => {
                    let xv = self.value(*x);
                    let k = g.item() * 2.0 / xv.len() as f64;
                    let gx = slot(&mut grads, *x, xv);
                    for ((v, p), q) in gx.data_mut().iter_mut().zip(xv.data()).zip(target.data()) {
                        *v += k * (p - q);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gradient accumulator for `v`, created as zeros shaped like `like`.
fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
