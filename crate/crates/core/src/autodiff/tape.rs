//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Nodes are appended in topological order during the forward pass, so the
//! backward pass is a single reverse sweep. The op set is exactly what the
//! recurrent models and losses in this crate need.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(Axis, Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    Scale(NodeId, f64),
    PowConst(NodeId, f64),
    Clamp(NodeId, f64, f64),
    Transpose(NodeId),
    /// Elementwise product with a fixed mask (inverted dropout).
    Dropout(NodeId, Tensor),
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a leaf node. Leaves are both constants and parameters; the
    /// caller decides whose gradients to read back after `backward`.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn require_same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::shape(op, ta.shape_string(), tb.shape_string()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn concat(&mut self, axis: Axis, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::validation("concat of zero parts"));
        }
        let first = self.value(parts[0]);
        let (mut rows, mut cols) = (first.rows(), first.cols());
        for &p in &parts[1..] {
            let t = self.value(p);
            match axis {
                Axis::Rows => {
                    if t.cols() != cols {
                        return Err(Error::shape(
                            "concat rows",
                            format!("{}x{}", rows, cols),
                            t.shape_string(),
                        ));
                    }
                    rows += t.rows();
                }
                Axis::Cols => {
                    if t.rows() != rows {
                        return Err(Error::shape(
                            "concat cols",
                            format!("{}x{}", rows, cols),
                            t.shape_string(),
                        ));
                    }
                    cols += t.cols();
                }
            }
        }
        let mut out = Tensor::zeros(rows, cols);
        match axis {
            Axis::Rows => {
                let mut r0 = 0;
                for &p in parts {
                    let t = self.value(p);
                    for r in 0..t.rows() {
                        for c in 0..cols {
                            out.set(r0 + r, c, t.get(r, c));
                        }
                    }
                    r0 += t.rows();
                }
            }
            Axis::Cols => {
                let mut c0 = 0;
                for &p in parts {
                    let t = self.value(p);
                    for r in 0..rows {
                        for c in 0..t.cols() {
                            out.set(r, c0 + c, t.get(r, c));
                        }
                    }
                    c0 += t.cols();
                }
            }
        }
        Ok(self.push(out, Op::Concat(axis, parts.to_vec())))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                out.set(r, c, e / z);
            }
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| k * x);
        self.push(v, Op::Scale(a, k))
    }

    pub fn pow_const(&mut self, a: NodeId, p: f64) -> NodeId {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::PowConst(a, p))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Apply a precomputed dropout mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId> {
        let v = self.value(a).zip(&mask, |x, m| x * m)?;
        Ok(self.push(v, Op::Dropout(a, mask)))
    }

    /// Populate gradients of every node reachable from `loss`.
    ///
    /// All gradients are reset first, so repeated calls are safe.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::validation(format!(
                "backward requires a scalar loss, got {}",
                self.value(loss).shape_string()
            )));
        }
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[loss.0].grad.fill(1.0);

        for i in (0..=loss.0).rev() {
            // Split borrows: the node being processed vs. its parents.
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &mut tail[0];
            let grad = node.grad.clone();
            if grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = head[a.0].value.clone();
                    let bv = head[b.0].value.clone();
                    let da = grad.matmul(&bv.transpose())?;
                    let db = av.transpose().matmul(&grad)?;
                    head[a.0].grad.add_assign(&da);
                    head[b.0].grad.add_assign(&db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    head[a.0].grad.add_assign(&grad);
                    head[b.0].grad.add_assign(&grad);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    head[a.0].grad.add_assign(&grad);
                    let neg = grad.map(|g| -g);
                    head[b.0].grad.add_assign(&neg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = grad.zip(&head[b.0].value, |g, y| g * y)?;
                    let db = grad.zip(&head[a.0].value, |g, x| g * x)?;
                    head[a.0].grad.add_assign(&da);
                    head[b.0].grad.add_assign(&db);
                }
                Op::Concat(axis, parts) => {
                    let axis = *axis;
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let part = &mut head[p.0];
                        let (pr, pc) = (part.value.rows(), part.value.cols());
                        for r in 0..pr {
                            for c in 0..pc {
                                let g = match axis {
                                    Axis::Rows => grad.get(offset + r, c),
                                    Axis::Cols => grad.get(r, offset + c),
                                };
                                let cur = part.grad.get(r, c);
                                part.grad.set(r, c, cur + g);
                            }
                        }
                        offset += match axis {
                            Axis::Rows => pr,
                            Axis::Cols => pc,
                        };
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let da = grad.zip(&node.value, |g, s| g * s * (1.0 - s))?;
                    head[a.0].grad.add_assign(&da);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let da = grad.zip(&node.value, |g, t| g * (1.0 - t * t))?;
                    head[a.0].grad.add_assign(&da);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let da = grad.zip(&node.value, |g, e| g * e)?;
                    head[a.0].grad.add_assign(&da);
                }
                Op::Log(a) => {
                    let a = *a;
                    let da = grad.zip(&head[a.0].value, |g, x| g / x)?;
                    head[a.0].grad.add_assign(&da);
                }
                Op::Softmax(a) => {
                    let a = *a;
                    let y = node.value.clone();
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = (0..y.cols()).map(|c| grad.get(r, c) * y.get(r, c)).sum();
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (grad.get(r, c) - dot));
                        }
                    }
                    head[a.0].grad.add_assign(&da);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let g = grad.item() / head[a.0].value.len() as f64;
                    let da = head[a.0].value.map(|_| g);
                    head[a.0].grad.add_assign(&da);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let g = grad.item();
                    let da = head[a.0].value.map(|_| g);
                    head[a.0].grad.add_assign(&da);
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    let da = grad.map(|g| g * k);
                    head[a.0].grad.add_assign(&da);
                }
                Op::PowConst(a, p) => {
                    let (a, p) = (*a, *p);
                    let da = grad.zip(&head[a.0].value, |g, x| {
                        let d = p * x.powf(p - 1.0);
                        if d.is_finite() {
                            g * d
                        } else {
                            0.0
                        }
                    })?;
                    head[a.0].grad.add_assign(&da);
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    let da = grad.zip(&head[a.0].value, |g, x| {
                        if x >= lo && x <= hi {
                            g
                        } else {
                            0.0
                        }
                    })?;
                    head[a.0].grad.add_assign(&da);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let da = grad.transpose();
                    head[a.0].grad.add_assign(&da);
                }
                Op::Dropout(a, mask) => {
                    let a = *a;
                    let da = grad.zip(mask, |g, m| g * m)?;
                    head[a.0].grad.add_assign(&da);
                }
            }
        }
        Ok(())
    }
}
