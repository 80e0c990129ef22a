//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive op in creation order, so parents always
//! precede children and a single reverse sweep visits each node once. Leaves
//! created with `requires_grad = true` accumulate `d(loss)/d(leaf)` across
//! calls to [`Tape::backward`] until [`Tape::zero_grad`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Logistic,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => logistic(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Logistic => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
            Activation::Relu => "relu",
        };
        f.write_str(s)
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddRow { x: Var, row: Var, sign: f64 },
    Act { x: Var, kind: Activation },
    Mse { pred: Var, target: Var },
    Sum { a: Var },
    ColMean { a: Var },
    SoftmaxXent { logits: Var, labels: Vec<usize> },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => vec![x, w, b],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![a, b]
            }
            Op::Transpose { a } | Op::Scale { a, .. } | Op::Sum { a } | Op::ColMean { a } => {
                vec![a]
            }
            Op::AddRow { x, row, .. } => vec![x, row],
            Op::Act { x, .. } => vec![x],
            Op::Mse { pred, target } => vec![pred, target],
            Op::SoftmaxXent { logits, .. } => vec![logits],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    /// Accumulated gradient of a leaf; `None` for leaves that do not require
    /// gradients or before the first backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_raw(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `x[n×a] · w[a×b] + b[b]`, with the bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::dim("affine", xs, ws));
        }
        let (n, a, m) = (xs[0], xs[1], ws[1]);
        if bs.iter().product::<usize>() != m || bs.len() > 2 || (bs.len() == 2 && bs[0] != 1) {
            return Err(Error::dim("affine", ws, bs));
        }
        let mut out = vec![0.0; n * m];
        {
            let bias = self.value(b).data();
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bias);
            }
        }
        matmul_into(self.value(x).data(), self.value(w).data(), &mut out, n, a, m);
        let value = Tensor::matrix(n, m, out)?;
        self.push("affine", value, Op::Affine { x, w, b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul { a, b })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::dim("transpose", self.shape(a), &[2]));
        }
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose { a })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", value, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", value, Op::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).scale(c);
        self.push("scale", value, Op::Scale { a, c })
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("add_row", x, row, 1.0)
    }

    /// Subtracts a row vector from every row of `x`.
    pub fn sub_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("sub_row", x, row, -1.0)
    }

    fn row_op(&mut self, name: &'static str, x: Var, row: Var, sign: f64) -> Result<Var> {
        let (xs, rs) = (self.shape(x), self.shape(row));
        if xs.len() != 2 || rs.iter().product::<usize>() != xs[1] {
            return Err(Error::dim(name, xs, rs));
        }
        let c = xs[1];
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (v, rv) in chunk.iter_mut().zip(&r) {
                *v += sign * rv;
            }
        }
        self.push(name, value, Op::AddRow { x, row, sign })
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let value = self.value(x).map(|v| kind.apply(v));
        self.push("nonlinear", value, Op::Act { x, kind })
    }

    /// Mean over all entries of the squared difference.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::dim("loss_mse", p.shape(), t.shape()));
        }
        if p.is_empty() || (p.shape().len() == 2 && p.rows() == 0) {
            return Err(Error::EmptyBatch { op: "loss_mse" });
        }
        let mut acc = 0.0;
        for (a, b) in p.data().iter().zip(t.data()) {
            acc += (a - b) * (a - b);
        }
        let value = Tensor::scalar(acc / p.len() as f64);
        self.push("loss_mse", value, Op::Mse { pred, target })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let mut acc = 0.0;
        for v in self.value(a).data() {
            acc += v;
        }
        self.push("sum", Tensor::scalar(acc), Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::EmptyBatch { op: "mean" });
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over rows of the per-row squared Euclidean norm.
    pub fn mean_row_sq_norm(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        if rows == 0 || self.value(a).is_empty() {
            return Err(Error::EmptyBatch { op: "mean_row_sq_norm" });
        }
        let sq = self.mul(a, a)?;
        let s = self.sum(sq)?;
        self.scale(s, 1.0 / rows as f64)
    }

    /// Column means of an `n×k` matrix as a rank-1 tensor of length `k`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.shape().len() != 2 || v.rows() == 0 {
            return Err(Error::EmptyBatch { op: "col_mean" });
        }
        let value = v.col_mean();
        self.push("col_mean", value, Op::ColMean { a })
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if l.shape().len() != 2 || l.rows() != labels.len() {
            return Err(Error::dim("softmax_xent", l.shape(), &[labels.len()]));
        }
        if labels.is_empty() {
            return Err(Error::EmptyBatch { op: "softmax_xent" });
        }
        let c = l.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::dim("softmax_xent", &[c], &[bad]));
        }
        let mut acc = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = l.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            acc += lse - row[y];
        }
        let value = Tensor::scalar(acc / labels.len() as f64);
        self.push(
            "softmax_xent",
            value,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Propagates `d(root)/d(node)` back to every gradient-requiring leaf,
    /// accumulating into the leaf's stored gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0).reshape_like(self.nodes[root.0].value.shape()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += v;
                        }
                    }
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (parent, pg) in self.local_grads(idx, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += v;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
        }
        for n in &self.nodes {
            if let Some(g) = &n.grad {
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let mut res = Vec::with_capacity(3);
                if self.requires_grad(*x) {
                    res.push((*x, g.matmul(&wv.transpose())?));
                }
                if self.requires_grad(*w) {
                    res.push((*w, xv.transpose().matmul(g)?));
                }
                if self.requires_grad(*b) {
                    let db = g.col_mean().scale(g.rows() as f64);
                    res.push((*b, db.reshape_like(self.value(*b).shape())));
                }
                res
            }
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                vec![
                    (*a, g.matmul(&bv.transpose())?),
                    (*b, av.transpose().matmul(g)?),
                ]
            }
            Op::Transpose { a } => vec![(*a, g.transpose())],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub { a, b } => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                vec![
                    (*a, g.zip_map(bv, |gv, y| gv * y)?),
                    (*b, g.zip_map(av, |gv, x| gv * x)?),
                ]
            }
            Op::Scale { a, c } => vec![(*a, g.scale(*c))],
            Op::AddRow { x, row, sign } => {
                let colsum = g.col_mean().scale(g.rows() as f64 * sign);
                vec![
                    (*x, g.clone()),
                    (*row, colsum.reshape_like(self.value(*row).shape())),
                ]
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x);
                let y = &node.value;
                let mut d = g.clone();
                for ((dv, &xi), &yi) in d.data_mut().iter_mut().zip(xv.data()).zip(y.data()) {
                    *dv *= kind.derivative(xi, yi);
                }
                vec![(*x, d)]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let c = 2.0 * g.item() / p.len() as f64;
                let d = p.zip_map(t, |a, b| c * (a - b))?;
                let neg = d.scale(-1.0);
                vec![(*pred, d), (*target, neg)]
            }
            Op::Sum { a } => {
                let gv = g.item();
                vec![(*a, self.value(*a).map(|_| gv))]
            }
            Op::ColMean { a } => {
                let av = self.value(*a);
                let (r, c) = (av.rows(), av.cols());
                let inv = 1.0 / r as f64;
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend(g.data().iter().map(|v| v * inv));
                }
                vec![(*a, Tensor::matrix(r, c, data)?)]
            }
            Op::SoftmaxXent { logits, labels } => {
                let l = self.value(*logits);
                let (r, c) = (l.rows(), l.cols());
                let scale = g.item() / r as f64;
                let mut data = Vec::with_capacity(r * c);
                for (i, &y) in labels.iter().enumerate() {
                    let row = l.row(i);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    for (j, v) in row.iter().enumerate() {
                        let p = (v - m).exp() / z;
                        let target = if j == y { 1.0 } else { 0.0 };
                        data.push(scale * (p - target));
                    }
                }
                vec![(*logits, Tensor::matrix(r, c, data)?)]
            }
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity() {
        let mut t = Tape::new();
        let x = t.constant(m(1, 2, &[1., 2.])).unwrap();
        let w = t.constant(Tensor::identity(2)).unwrap();
        let b = t.constant(Tensor::vector(vec![0., 0.])).unwrap();
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1., 2.]);
    }

    #[test]
    fn affine_hand_checked() {
        let mut t = Tape::new();
        let x = t.constant(m(1, 2, &[1., 1.])).unwrap();
        let w = t.constant(m(2, 1, &[1., 1.])).unwrap();
        let b = t.constant(Tensor::vector(vec![1.])).unwrap();
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[3.]);
    }

    #[test]
    fn affine_shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3, 4])).unwrap();
        let w = t.constant(Tensor::zeros(&[3, 2])).unwrap();
        let b = t.constant(Tensor::zeros(&[2])).unwrap();
        match t.affine(x, w, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![3, 4]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn nonlinearities_at_reference_points() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0.0])).unwrap();
        let neg = t.constant(Tensor::vector(vec![-3.0])).unwrap();
        let a = t.act(z, Activation::Tanh).unwrap();
        let b = t.act(z, Activation::Logistic).unwrap();
        let c = t.act(neg, Activation::Relu).unwrap();
        assert_eq!(t.value(a).item(), 0.0);
        assert_eq!(t.value(b).item(), 0.5);
        assert_eq!(t.value(c).item(), 0.0);
        assert!(matches!("softsign".parse::<Activation>(), Err(Error::Config(_))));
    }

    #[test]
    fn mse_values_and_empty_batch() {
        let mut t = Tape::new();
        let p = t.constant(m(1, 1, &[1.])).unwrap();
        let q = t.constant(m(1, 1, &[3.])).unwrap();
        let l = t.mse(p, q).unwrap();
        assert_eq!(t.value(l).item(), 4.0);
        let same = t.mse(p, p).unwrap();
        assert_eq!(t.value(same).item(), 0.0);
        let e = t.constant(Tensor::zeros(&[0, 3])).unwrap();
        assert!(matches!(t.mse(e, e), Err(Error::EmptyBatch { .. })));
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1., 2., 3.]), true).unwrap();
        let sq = t.mul(x, x).unwrap();
        let l = t.sum(sq).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2., 4., 6.]);
        // second call accumulates
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[4., 8., 12.]);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn independent_leaf_gets_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1., 2.]), true).unwrap();
        let y = t.leaf(Tensor::vector(vec![5., 6.]), true).unwrap();
        let l = t.sum(x).unwrap();
        t.backward(l).unwrap();
        // y never reached: report as zeros
        let gy = t.grad(y).cloned().unwrap_or_else(|| Tensor::zeros(&[2]));
        assert_eq!(gy.data(), &[0., 0.]);
    }

    #[test]
    fn non_scalar_root_is_contract_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1., 2.]), true).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut t = Tape::new();
        assert!(t.leaf(Tensor::vector(vec![f64::NAN]), true).is_err());
        let x = t.constant(Tensor::vector(vec![1e300])).unwrap();
        assert!(matches!(t.mul(x, x), Err(Error::NonFinite { op: "mul" })));
    }
}
