//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every operation whose operands include a gradient-requiring tensor records
//! a node holding the operand handles and a backward rule. Creation order is a
//! topological order of the graph (an operation's inputs always exist before
//! its output), so [`backward`] walks reachable nodes once, in reverse
//! creation order, with a fixed reduction order for deterministic gradients.
//!
//! Tensors are immutable after construction; the only interior mutability is
//! additive gradient accumulation, reset via [`Tensor::zero_grad`]. Gradients
//! with respect to non-parameter tensors (attack inputs) are obtained through
//! [`grad_wrt`], which writes nothing into any tensor.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn check_finite(data: &[f64], context: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

#[derive(Clone, Debug)]
enum Rule {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Matmul { m: usize, k: usize, n: usize },
    Transpose { rows: usize, cols: usize },
    Relu,
    LogSoftmax { rows: usize, cols: usize },
    Exp,
    Sum,
    Mean,
    Clamp { lo: f64, hi: f64 },
}

struct Node {
    parents: Vec<Tensor>,
    rule: Rule,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// A dense row-major tensor of 64-bit floats. Cloning copies the handle, not
/// the storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn wrap(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    /// Construct a tensor, validating shape/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(
                "shape",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "shape",
                format!("shape {shape:?} implies {numel} values, got {}", data.len()),
            ));
        }
        check_finite(&data, "tensor construction")?;
        Ok(Self::wrap(shape, data, requires_grad, None))
    }

    /// 1-D constant tensor.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data, false)
    }

    /// 2-D constant tensor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data, false)
    }

    /// Gradient-requiring leaf (a model parameter).
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, data, true)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value], false)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::wrap(shape, vec![0.0; numel], false, None)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// The single value of a scalar tensor.
    pub fn value(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.inner.data[0])
        } else {
            Err(Error::NotScalar {
                shape: self.inner.shape.clone(),
            })
        }
    }

    /// A copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `values` into the stored gradient (allocating zeros on first use).
    pub fn accumulate_grad(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad".into(),
                lhs: self.inner.shape.clone(),
                rhs: vec![values.len()],
            });
        }
        check_finite(values, "gradient accumulation")?;
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, vi) in g.iter_mut().zip(values) {
                    *gi += vi;
                }
            }
            None => *slot = Some(values.to_vec()),
        }
        Ok(())
    }

    /// Row/column view of a 1-D or 2-D tensor.
    fn as_2d(&self) -> (usize, usize) {
        match self.inner.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => (other.iter().product::<usize>() / other[other.len() - 1], other[other.len() - 1]),
        }
    }

    /// Per-row index of the maximum entry (first index wins ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        let (rows, cols) = self.as_2d();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.inner.data[r * cols..(r + 1) * cols];
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        out
    }

    fn result(&self, shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, rule: Rule, op: &str) -> Result<Tensor> {
        check_finite(&data, op)?;
        let requires = parents.iter().any(|p| p.requires_grad());
        let node = requires.then_some(Node { parents, rule });
        Ok(Tensor::wrap(shape, data, requires, node))
    }
}

/// How two elementwise operands line up.
enum Align {
    Equal,
    /// Right operand repeats along the left operand's leading batch axis.
    RhsBatched { batch: usize, inner: usize },
    /// Left operand repeats along the right operand's leading batch axis.
    LhsBatched { batch: usize, inner: usize },
}

/// Elementwise ops accept equal shapes, or shapes differing by exactly one
/// leading batch axis (e.g. `[b, d]` with `[d]`). No other broadcasting.
fn align(op: &str, a: &Tensor, b: &Tensor) -> Result<Align> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(Align::Equal);
    }
    if sa.len() == sb.len() + 1 && &sa[1..] == sb {
        return Ok(Align::RhsBatched {
            batch: sa[0],
            inner: b.numel(),
        });
    }
    if sb.len() == sa.len() + 1 && &sb[1..] == sa {
        return Ok(Align::LhsBatched {
            batch: sb[0],
            inner: a.numel(),
        });
    }
    Err(Error::ShapeMismatch {
        op: op.into(),
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    })
}

fn elementwise(op: &str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
    match align(op, a, b)? {
        Align::Equal => {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok((a.shape().to_vec(), data))
        }
        Align::RhsBatched { batch, inner } => {
            let mut data = Vec::with_capacity(batch * inner);
            for r in 0..batch {
                for j in 0..inner {
                    data.push(f(a.data()[r * inner + j], b.data()[j]));
                }
            }
            Ok((a.shape().to_vec(), data))
        }
        Align::LhsBatched { batch, inner } => {
            let mut data = Vec::with_capacity(batch * inner);
            for r in 0..batch {
                for j in 0..inner {
                    data.push(f(a.data()[j], b.data()[r * inner + j]));
                }
            }
            Ok((b.shape().to_vec(), data))
        }
    }
}

/// Stable row-wise log-softmax (max subtraction).
fn log_softmax_raw(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for (j, &v) in row.iter().enumerate() {
            out[r * cols + j] = v - lse;
        }
    }
    out
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = elementwise("add", self, other, |x, y| x + y)?;
        self.result(shape, data, vec![self.clone(), other.clone()], Rule::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = elementwise("sub", self, other, |x, y| x - y)?;
        self.result(shape, data, vec![self.clone(), other.clone()], Rule::Sub, "sub")
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = elementwise("mul", self, other, |x, y| x * y)?;
        self.result(shape, data, vec![self.clone(), other.clone()], Rule::Mul, "mul")
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                context: "scale factor".into(),
            });
        }
        let data = self.data().iter().map(|&x| c * x).collect();
        self.result(self.shape().to_vec(), data, vec![self.clone()], Rule::Scale(c), "scale")
    }

    /// 2-D matrix product `self[m×k] · other[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul".into(),
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        let (m, k) = match *self.shape() {
            [m, k] => (m, k),
            _ => return Err(mismatch()),
        };
        let (k2, n) = match *other.shape() {
            [k2, n] => (k2, n),
            _ => return Err(mismatch()),
        };
        if k != k2 {
            return Err(mismatch());
        }
        let (a, b) = (self.data(), other.data());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                for j in 0..n {
                    data[i * n + j] += aip * b[p * n + j];
                }
            }
        }
        self.result(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Rule::Matmul { m, k, n },
            "matmul",
        )
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let [rows, cols] = *self.shape() else {
            return Err(Error::ShapeMismatch {
                op: "transpose".into(),
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        };
        let src = self.data();
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        self.result(
            vec![cols, rows],
            data,
            vec![self.clone()],
            Rule::Transpose { rows, cols },
            "transpose",
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| x.max(0.0)).collect();
        self.result(self.shape().to_vec(), data, vec![self.clone()], Rule::Relu, "relu")
    }

    /// Row-wise log-softmax over the trailing (class) axis; 1-D input is one row.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let (rows, cols) = match self.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "log_softmax".into(),
                    lhs: self.shape().to_vec(),
                    rhs: vec![],
                })
            }
        };
        let data = log_softmax_raw(self.data(), rows, cols);
        self.result(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Rule::LogSoftmax { rows, cols },
            "log_softmax",
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| x.exp()).collect();
        self.result(self.shape().to_vec(), data, vec![self.clone()], Rule::Exp, "exp")
    }

    /// Sum of all entries, as a scalar tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        self.result(vec![1], vec![total], vec![self.clone()], Rule::Sum, "sum")
    }

    /// Mean of all entries, as a scalar tensor.
    pub fn mean(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        let n = self.numel() as f64;
        self.result(vec![1], vec![total / n], vec![self.clone()], Rule::Mean, "mean")
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::invalid("clamp", format!("invalid bounds ({lo}, {hi})")));
        }
        let data = self.data().iter().map(|&x| x.min(hi).max(lo)).collect();
        self.result(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Rule::Clamp { lo, hi },
            "clamp",
        )
    }
}

/// Gradient contributions flowing from a node's output to its parents.
fn propagate(node: &Node, out_grad: &[f64], grads: &mut HashMap<u64, Vec<f64>>) {
    let mut send = |t: &Tensor, g: Vec<f64>| {
        let slot = grads.entry(t.id()).or_insert_with(|| vec![0.0; t.numel()]);
        for (si, gi) in slot.iter_mut().zip(&g) {
            *si += gi;
        }
    };
    let parent = |i: usize| -> &Tensor { &node.parents[i] };
    match &node.rule {
        Rule::Add | Rule::Sub => {
            let (a, b) = (parent(0), parent(1));
            let sign = if matches!(node.rule, Rule::Sub) { -1.0 } else { 1.0 };
            send(a, reduce_to(a, out_grad, 1.0));
            send(b, reduce_to(b, out_grad, sign));
        }
        Rule::Mul => {
            let (a, b) = (parent(0), parent(1));
            // d(a⊙b)/da = g⊙b broadcast back onto a's shape, and symmetrically.
            let ga = combine_like(a, b, out_grad);
            let gb = combine_like(b, a, out_grad);
            send(a, ga);
            send(b, gb);
        }
        Rule::Scale(c) => {
            let a = parent(0);
            send(a, out_grad.iter().map(|&g| c * g).collect());
        }
        Rule::Matmul { m, k, n } => {
            let (a, b) = (parent(0), parent(1));
            let (m, k, n) = (*m, *k, *n);
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += out_grad[i * n + j] * b.data()[p * n + j];
                    }
                    ga[i * k + p] = acc;
                }
            }
            let mut gb = vec![0.0; k * n];
            for p in 0..k {
                for j in 0..n {
                    let mut acc = 0.0;
                    for i in 0..m {
                        acc += a.data()[i * k + p] * out_grad[i * n + j];
                    }
                    gb[p * n + j] = acc;
                }
            }
            send(a, ga);
            send(b, gb);
        }
        Rule::Transpose { rows, cols } => {
            let a = parent(0);
            let mut g = vec![0.0; out_grad.len()];
            // out is cols×rows; route entry (c, r) back to (r, c).
            for c in 0..*cols {
                for r in 0..*rows {
                    g[r * cols + c] = out_grad[c * rows + r];
                }
            }
            send(a, g);
        }
        Rule::Relu => {
            let a = parent(0);
            let g = a
                .data()
                .iter()
                .zip(out_grad)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            send(a, g);
        }
        Rule::LogSoftmax { rows, cols } => {
            let a = parent(0);
            let y = log_softmax_raw(a.data(), *rows, *cols);
            let mut g = vec![0.0; out_grad.len()];
            for r in 0..*rows {
                let base = r * cols;
                let row_sum: f64 = out_grad[base..base + cols].iter().sum();
                for j in 0..*cols {
                    g[base + j] = out_grad[base + j] - y[base + j].exp() * row_sum;
                }
            }
            send(a, g);
        }
        Rule::Exp => {
            let a = parent(0);
            let g = a
                .data()
                .iter()
                .zip(out_grad)
                .map(|(&x, &g)| g * x.exp())
                .collect();
            send(a, g);
        }
        Rule::Sum => {
            let a = parent(0);
            send(a, vec![out_grad[0]; a.numel()]);
        }
        Rule::Mean => {
            let a = parent(0);
            let scale = out_grad[0] / a.numel() as f64;
            send(a, vec![scale; a.numel()]);
        }
        Rule::Clamp { lo, hi } => {
            let a = parent(0);
            let g = a
                .data()
                .iter()
                .zip(out_grad)
                .map(|(&x, &g)| if x >= *lo && x <= *hi { g } else { 0.0 })
                .collect();
            send(a, g);
        }
    }
}

/// Gradient of an elementwise output with respect to `target`, where `other`
/// multiplied in: g ⊙ other, summed over the batch axis if `target` was the
/// broadcast operand.
fn combine_like(target: &Tensor, other: &Tensor, out_grad: &[f64]) -> Vec<f64> {
    let tn = target.numel();
    if other.numel() == out_grad.len() && tn == out_grad.len() {
        return out_grad.iter().zip(other.data()).map(|(&g, &o)| g * o).collect();
    }
    if tn == out_grad.len() {
        // target is full-shape, other was broadcast along the batch axis
        let inner = other.numel();
        return out_grad
            .iter()
            .enumerate()
            .map(|(i, &g)| g * other.data()[i % inner])
            .collect();
    }
    // target was broadcast: sum contributions over the batch axis
    let mut g = vec![0.0; tn];
    for (i, &go) in out_grad.iter().enumerate() {
        g[i % tn] += go * other.data()[i];
    }
    g
}

/// Identity-weight analogue of [`combine_like`] for add/sub.
fn reduce_to(target: &Tensor, out_grad: &[f64], sign: f64) -> Vec<f64> {
    let tn = target.numel();
    if tn == out_grad.len() {
        return out_grad.iter().map(|&g| sign * g).collect();
    }
    let mut g = vec![0.0; tn];
    for (i, &go) in out_grad.iter().enumerate() {
        g[i % tn] += sign * go;
    }
    g
}

/// Reverse sweep from a scalar loss. Returns every tensor reachable through
/// recorded nodes (descending creation order) and the gradient of the loss
/// with respect to each of them.
fn backprop(loss: &Tensor) -> Result<(Vec<Tensor>, HashMap<u64, Vec<f64>>)> {
    if loss.numel() != 1 {
        return Err(Error::NotScalar {
            shape: loss.shape().to_vec(),
        });
    }
    let mut visited: HashSet<u64> = HashSet::new();
    let mut order: Vec<Tensor> = Vec::new();
    let mut stack = vec![loss.clone()];
    while let Some(t) = stack.pop() {
        if !visited.insert(t.id()) {
            continue;
        }
        if let Some(node) = &t.inner.node {
            for p in &node.parents {
                stack.push(p.clone());
            }
        }
        order.push(t);
    }
    order.sort_by(|a, b| b.id().cmp(&a.id()));

    let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
    grads.insert(loss.id(), vec![1.0]);
    for t in &order {
        let Some(node) = &t.inner.node else { continue };
        let Some(out_grad) = grads.get(&t.id()).cloned() else {
            continue;
        };
        propagate(node, &out_grad, &mut grads);
    }
    Ok((order, grads))
}

/// Accumulate d(loss)/d(t) into `t.grad` for every gradient-requiring tensor
/// reachable from the scalar `loss`. Unreachable tensors are untouched.
pub fn backward(loss: &Tensor) -> Result<()> {
    let (order, grads) = backprop(loss)?;
    for t in &order {
        if t.requires_grad() {
            if let Some(g) = grads.get(&t.id()) {
                t.accumulate_grad(g)?;
            }
        }
    }
    Ok(())
}

/// Gradient of the scalar `loss` with respect to `target`, returned as a new
/// tensor without touching any stored gradient (including `target`'s own).
pub fn grad_wrt(loss: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (_, grads) = backprop(loss)?;
    match grads.get(&target.id()) {
        Some(g) => Tensor::new(target.shape().to_vec(), g.clone(), false),
        None => Err(Error::NotInGraph),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: Vec<f64>) -> Tensor {
        Tensor::from_vec(data).unwrap()
    }

    fn p(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::param(vec![n], data).unwrap()
    }

    #[test]
    fn relu_definition() {
        let x = t(vec![-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::matrix(3, 3, vec![2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 0.0, 1.0, 7.0]).unwrap();
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn log_softmax_uniform_two() {
        let x = t(vec![0.0, 0.0]);
        let out = x.log_softmax().unwrap();
        let expected = 0.5f64.ln();
        assert!((out.data()[0] - expected).abs() < 1e-12);
        assert!((out.data()[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_square_sum() {
        let w = p(vec![1.0, 2.0, 3.0]);
        let loss = w.mul(&w).unwrap().sum().unwrap();
        backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_mean_relu() {
        let x = p(vec![-1.0, 4.0]);
        let loss = x.relu().unwrap().mean().unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = p(vec![1.0, 2.0]);
        let y = x.relu().unwrap();
        assert!(matches!(backward(&y), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn grad_wrt_sum_is_ones() {
        let x = p(vec![0.3, -0.2, 1.5, 0.0]);
        let loss = x.sum().unwrap();
        let g = grad_wrt(&loss, &x).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 1.0]);
        // target untouched
        assert!(x.grad().is_none());
    }

    #[test]
    fn grad_wrt_scaled_sum_is_threes() {
        let x = p(vec![0.3, -0.2]);
        let loss = x.scale(3.0).unwrap().sum().unwrap();
        let g = grad_wrt(&loss, &x).unwrap();
        assert_eq!(g.data(), &[3.0, 3.0]);
    }

    #[test]
    fn grad_wrt_unrelated_errors() {
        let x = p(vec![1.0]);
        let z = p(vec![5.0]);
        let loss = x.mul(&x).unwrap().sum().unwrap();
        assert!(matches!(grad_wrt(&loss, &z), Err(Error::NotInGraph)));
    }

    #[test]
    fn grads_accumulate_and_reset() {
        let w = p(vec![2.0]);
        let loss1 = w.mul(&w).unwrap().sum().unwrap();
        backward(&loss1).unwrap();
        let loss2 = w.scale(10.0).unwrap().sum().unwrap();
        backward(&loss2).unwrap();
        assert_eq!(w.grad().unwrap(), vec![14.0]); // 2w + 10
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn backward_is_linear() {
        let build = |w: &Tensor| {
            let sq = w.mul(w).unwrap().sum().unwrap(); // Σw²
            let lin = w.scale(2.0).unwrap().sum().unwrap(); // 2Σw
            (sq, lin)
        };
        let w = p(vec![0.7, -1.3, 2.1]);
        let (l1, l2) = build(&w);
        let combo = l1.scale(3.0).unwrap().add(&l2.scale(-2.0).unwrap()).unwrap();
        backward(&combo).unwrap();
        let got = w.grad().unwrap();

        let w2 = p(vec![0.7, -1.3, 2.1]);
        let (l1b, l2b) = build(&w2);
        backward(&l1b).unwrap();
        let g1 = w2.grad().unwrap();
        w2.zero_grad();
        backward(&l2b).unwrap();
        let g2 = w2.grad().unwrap();

        for i in 0..3 {
            let expect = 3.0 * g1[i] - 2.0 * g2[i];
            assert!((got[i] - expect).abs() < 1e-10, "entry {i}: {} vs {expect}", got[i]);
        }
    }

    #[test]
    fn diamond_graph_visits_nodes_once() {
        // loss = sum(y + y) with y = 2x: dloss/dx must be 4, not 8.
        let x = p(vec![1.0]);
        let y = x.scale(2.0).unwrap();
        let loss = y.add(&y).unwrap().sum().unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn bias_broadcast_backward_sums_batch() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::param(vec![2], vec![0.1, -0.1]).unwrap();
        let loss = x.add(&b).unwrap().sum().unwrap();
        backward(&loss).unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = t(vec![1.0, 2.0]);
        let b = t(vec![1.0, 2.0, 3.0]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "message was: {msg}");
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(Tensor::from_vec(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn overflow_is_reported_not_stored() {
        let x = t(vec![1e308]);
        assert!(matches!(x.scale(10.0), Err(Error::NonFinite { .. })));
        assert!(x.exp().is_err());
    }

    #[test]
    fn repeated_pass_is_bit_identical() {
        let run = || {
            let w = Tensor::param(vec![2, 2], vec![0.5, -0.25, 1.5, 0.75]).unwrap();
            let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
            let loss = x
                .matmul(&w)
                .unwrap()
                .relu()
                .unwrap()
                .log_softmax()
                .unwrap()
                .mean()
                .unwrap();
            backward(&loss).unwrap();
            (loss.value().unwrap(), w.grad().unwrap())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        let bits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&g1), bits(&g2));
    }

    #[test]
    fn transpose_round_trip() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let tt = a.transpose().unwrap().transpose().unwrap();
        assert_eq!(tt.data(), a.data());
        assert_eq!(tt.shape(), a.shape());
    }

    #[test]
    fn clamp_bounds_and_gradient_window() {
        let x = Tensor::param(vec![3], vec![-2.0, 0.5, 4.0]).unwrap();
        let y = x.clamp(0.0, 1.0).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
        let loss = y.sum().unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }
}
