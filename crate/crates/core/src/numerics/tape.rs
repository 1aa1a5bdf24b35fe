//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`Tape`] records every operation of a forward pass together with its
//! output value. Leaves are either constants or named slots of a
//! [`ParamStore`]. [`Tape::backward`] replays the record in reverse and adds
//! the gradient of each trainable slot into the store's accumulator.
//!
//! ```
//! use coursegraph::numerics::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! store.insert("w", Tensor::filled(2, 2, 0.5), true);
//! let mut tape = Tape::new();
//! let w = tape.param(&store, "w").unwrap();
//! let s = tape.sum_all(w).unwrap();
//! tape.backward(s, 1.0, &mut store).unwrap();
//! assert_eq!(store.grad("w").unwrap(), &Tensor::filled(2, 2, 1.0));
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    SpMatMul(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    MeanRows(Var),
    MeanAll(Var),
    SumAll(Var),
    GatherRows(Var, Arc<[usize]>),
    RowDot(Var, Var),
    SoftmaxVec(Var),
    Concat(Vec<Var>),
    Element(Var, usize),
    SoftmaxCrossEntropy(Var, Arc<[usize]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded operations, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops the record so the tape can be reused for another step.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericFault { op });
        }
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant, false)
    }

    /// Records the current value of a store slot as a leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let (value, trainable) = store
            .slot(name)
            .map(|s| (s.value.clone(), s.trainable))
            .ok_or_else(|| Error::Invalid(format!("unknown parameter '{name}'")))?;
        self.push("param", value, Op::Param(name.to_string()), trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", v, Op::MatMul(a, b), ng)
    }

    /// Constant sparse matrix times a recorded value.
    pub fn sp_matmul(&mut self, s: &Arc<CsrMatrix>, b: Var) -> Result<Var> {
        let v = s.matmul_dense(self.value(b))?;
        let ng = self.ng(b);
        self.push("sp_matmul", v, Op::SpMatMul(Arc::clone(s), b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push("add", v, Op::Add(a, b), ng)
    }

    /// Adds a 1xC row to every row of an NxC value.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let mut v = x.clone();
        for r in 0..v.rows() {
            for (o, bb) in v.row_mut(r).iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push("add_bias", v, Op::AddRow(a, bias), ng)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push("hadamard", v, Op::Hadamard(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push("scale", v, Op::Scale(a, c), ng)
    }

    /// Multiplies every entry of `a` by the 1x1 value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(Error::shape("mul_scalar", format!("scalar operand is {:?}", sv.shape())));
        }
        let c = sv.item();
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(a) || self.ng(s);
        self.push("mul_scalar", v, Op::MulScalar(a, s), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        let ng = self.ng(a);
        self.push("transpose", v, Op::Transpose(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push("sigmoid", v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push("tanh", v, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push("relu", v, Op::Relu(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push("softplus", v, Op::Softplus(a), ng)
    }

    /// Column-wise mean, NxC to 1xC.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rows() == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let v = self.value(a).mean_rows();
        let ng = self.ng(a);
        self.push("mean_rows", v, Op::MeanRows(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean_all", "empty tensor"));
        }
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        let ng = self.ng(a);
        self.push("mean_all", v, Op::MeanAll(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push("sum_all", v, Op::SumAll(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let v = self.value(a).gather_rows(&idx)?;
        let ng = self.ng(a);
        self.push("gather_rows", v, Op::GatherRows(a, idx), ng)
    }

    /// Row-wise inner products, two NxC values to Nx1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("row_dot", x, y)?;
        let data = (0..x.rows()).map(|r| super::tensor::dot(x.row(r), y.row(r))).collect();
        let v = Tensor::from_vec(x.rows(), 1, data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push("row_dot", v, Op::RowDot(a, b), ng)
    }

    /// Softmax over a 1xN row with max subtraction.
    pub fn softmax_vec(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 || x.cols() == 0 {
            return Err(Error::shape("softmax_vec", format!("expected 1xN, got {:?}", x.shape())));
        }
        let v = Tensor::row_vector(softmax(x.data()));
        let ng = self.ng(a);
        self.push("softmax_vec", v, Op::SoftmaxVec(a), ng)
    }

    /// Joins 1x1 values into a 1xN row.
    pub fn concat_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape() != (1, 1) {
                return Err(Error::shape("concat_scalars", format!("part is {:?}", t.shape())));
            }
            data.push(t.item());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push("concat_scalars", Tensor::row_vector(data), Op::Concat(parts.to_vec()), ng)
    }

    /// Entry `j` of a 1xN row as a 1x1 value.
    pub fn element(&mut self, a: Var, j: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 || j >= x.cols() {
            return Err(Error::shape("element", format!("index {j} of {:?}", x.shape())));
        }
        let v = Tensor::scalar(x.get(0, j));
        let ng = self.ng(a);
        self.push("element", v, Op::Element(a, j), ng)
    }

    /// Mean multinomial cross-entropy of `logits` (NxC) against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        let x = self.value(logits);
        if labels.len() != x.rows() || x.rows() == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for {} rows", labels.len(), x.rows()),
            ));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= x.cols() {
                return Err(Error::shape("softmax_cross_entropy", format!("label {y} >= {}", x.cols())));
            }
            let row = x.row(r);
            total += log_sum_exp(row) - row[y];
        }
        let v = Tensor::scalar(total / x.rows() as f64);
        let ng = self.ng(logits);
        self.push("softmax_cross_entropy", v, Op::SoftmaxCrossEntropy(logits, labels), ng)
    }

    /// Accumulates `loss_seed * d(loss)/d(slot)` into every trainable slot
    /// that `loss` depends on. A tape can be replayed only once.
    pub fn backward(&mut self, loss: Var, loss_seed: f64, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward", format!("loss is {:?}", self.value(loss).shape())));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(loss_seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |v: Var, delta: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => store.accumulate(name, &g)?,
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        acc(*a, g.matmul_t(self.value(*b))?);
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(*b, self.value(*a).t_matmul(&g)?);
                    }
                }
                Op::SpMatMul(s, b) => acc(*b, s.t_matmul_dense(&g)?),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, b) => {
                    let mut col = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (c, v) in col.iter_mut().zip(g.row(r)) {
                            *c += v;
                        }
                    }
                    acc(*a, g);
                    acc(*b, Tensor::row_vector(col));
                }
                Op::Hadamard(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    acc(*a, g.zip_map(y, |gv, yv| gv * yv));
                    acc(*b, g.zip_map(x, |gv, xv| gv * xv));
                }
                Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
                Op::MulScalar(a, s) => {
                    let c = self.value(*s).item();
                    let ds: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    acc(*a, g.map(|v| v * c));
                    acc(*s, Tensor::scalar(ds));
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
                Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
                Op::Relu(a) => acc(
                    *a,
                    g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
                ),
                Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x))),
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let n = x.rows() as f64;
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for (o, gv) in d.row_mut(r).iter_mut().zip(g.data()) {
                            *o = gv / n;
                        }
                    }
                    acc(*a, d);
                }
                Op::MeanAll(a) => {
                    let x = self.value(*a);
                    acc(*a, Tensor::filled(x.rows(), x.cols(), g.item() / x.len() as f64));
                }
                Op::SumAll(a) => {
                    let x = self.value(*a);
                    acc(*a, Tensor::filled(x.rows(), x.cols(), g.item()));
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, gv) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    acc(*a, d);
                }
                Op::RowDot(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    let mut db = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..x.rows() {
                        let gv = g.get(r, 0);
                        for c in 0..x.cols() {
                            da.set(r, c, gv * y.get(r, c));
                            db.set(r, c, gv * x.get(r, c));
                        }
                    }
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::SoftmaxVec(a) => {
                    let y = node.value.data();
                    let gy: f64 = g.data().iter().zip(y).map(|(a, b)| a * b).sum();
                    let d = y.iter().zip(g.data()).map(|(yv, gv)| yv * (gv - gy)).collect();
                    acc(*a, Tensor::row_vector(d));
                }
                Op::Concat(parts) => {
                    for (j, p) in parts.iter().enumerate() {
                        acc(*p, Tensor::scalar(g.get(0, j)));
                    }
                }
                Op::Element(a, j) => {
                    let mut d = Tensor::zeros(1, self.value(*a).cols());
                    d.set(0, *j, g.item());
                    acc(*a, d);
                }
                Op::SoftmaxCrossEntropy(a, labels) => {
                    let x = self.value(*a);
                    let scale = g.item() / x.rows() as f64;
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for (r, &y) in labels.iter().enumerate() {
                        let p = softmax(x.row(r));
                        for (c, pv) in p.into_iter().enumerate() {
                            let target = if c == y { 1.0 } else { 0.0 };
                            d.set(r, c, scale * (pv - target));
                        }
                    }
                    acc(*a, d);
                }
            }
        }
        Ok(())
    }
}

/// Softmax of a slice with max subtraction; outputs are strictly positive.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
