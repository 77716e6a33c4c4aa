//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. Nodes whose
//! operands all lack `requires_grad` are stored as constants and carry no
//! backward rule. A fresh tape is built per forward pass; [`Tape::backward`]
//! borrows the tape immutably, so several roots can be differentiated from
//! one recording.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{gemm, pairwise_sum};
use crate::ops::{conv, pool};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The elementary operations reachable through [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Sigmoid,
    Tanh,
    MatMul,
    Sum,
    Mean,
}

impl Primitive {
    fn arity(self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::MatMul => "matmul",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// `[m,k]·[k,n]` or `[m,k]·[k]`.
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    /// Contiguous flat range `[offset, offset + len)` of the source.
    Slice { src: Var, offset: usize },
    Conv2d {
        x: Var,
        weight: Var,
        bias: Var,
        geom: conv::ConvGeom,
    },
    AvgPool2d { x: Var, geom: pool::PlaneGeom, factor: usize },
    Upsample { x: Var, geom: pool::PlaneGeom, factor: usize },
    GlobalAvgPool { x: Var, plane: usize },
    /// Elementwise product with a fixed mask (dropout).
    Mask { x: Var, mask: Arc<Vec<f64>> },
    SoftmaxCrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
    param: Option<String>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// A differentiable leaf without a parameter name (used to check
    /// gradients with respect to inputs).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true, None)
    }

    /// A named trainable leaf. Its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        self.leaf(value, true, Some(name.to_string()))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, operands: &[Var], op: Op) -> Var {
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Sign (`> 0`) of every ReLU input on the tape, in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().map(|&x| x > 0.0))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Dispatches a [`Primitive`] over an operand list.
    pub fn apply(&mut self, kind: Primitive, operands: &[Var]) -> Result<Var> {
        if operands.len() != kind.arity() {
            return Err(Error::Contract(format!(
                "{} takes {} operand(s), got {}",
                kind.name(),
                kind.arity(),
                operands.len()
            )));
        }
        let a = operands[0];
        match kind {
            Primitive::Add => self.add(a, operands[1]),
            Primitive::Sub => self.sub(a, operands[1]),
            Primitive::Mul => self.mul(a, operands[1]),
            Primitive::MatMul => self.matmul(a, operands[1]),
            Primitive::Scale(s) => Ok(self.scale(a, s)),
            Primitive::Relu => Ok(self.relu(a)),
            Primitive::Sigmoid => Ok(self.sigmoid(a)),
            Primitive::Tanh => Ok(self.tanh(a)),
            Primitive::Sum => Ok(self.sum(a)),
            Primitive::Mean => Ok(self.mean(a)),
        }
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.len() == 1 {
            Ok(sa.shape().to_vec())
        } else if sa.len() == 1 {
            Ok(sb.shape().to_vec())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.shape().to_vec(),
                rhs: sb.shape().to_vec(),
            })
        }
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.broadcast_shape(op_name, a, b)?;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match (xa.len(), xb.len()) {
            (la, lb) if la == lb => xa.iter().zip(xb).map(|(&p, &q)| f(p, q)).collect(),
            (1, _) => xb.iter().map(|&q| f(xa[0], q)).collect(),
            _ => xa.iter().map(|&p| f(p, xb[0])).collect(),
        };
        debug_assert_eq!(data.len(), n);
        Ok(self.push(Tensor::from_parts(shape, data), &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, &[a], Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, &[a], Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, &[a], Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, &[a], Op::Tanh(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 || !(sb.len() == 1 || sb.len() == 2) || sa[1] != sb[0] {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        Ok(self.push(Tensor::from_parts(shape, out), &[a, b], Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![c, r], out), &[a], Op::Transpose(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = pairwise_sum(self.value(a).data());
        self.push(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a).data();
        let m = pairwise_sum(x) / x.len() as f64;
        self.push(Tensor::scalar(m), &[a], Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, &[a], Op::Reshape(a)))
    }

    /// Flat contiguous slice `[offset, offset + shape.product())` of `a`,
    /// viewed with `shape`.
    pub fn slice(&mut self, a: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let x = self.value(a).data();
        if len == 0 || offset + len > x.len() {
            return Err(Error::shape(
                "slice",
                format!("range {offset}..{} outside {:?}", offset + len, self.shape(a)),
            ));
        }
        let out = Tensor::from_parts(shape.to_vec(), x[offset..offset + len].to_vec());
        Ok(self.push(out, &[a], Op::Slice { src: a, offset }))
    }

    /// Entry `i` along the leading axis.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 || i >= s[0] {
            return Err(Error::shape("row", format!("row {i} of {s:?}")));
        }
        let inner = &s[1..];
        let len: usize = inner.iter().product();
        self.slice(a, i * len, inner)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_len = self.value(root).len();
        if root_len != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let mut params = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g))
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                params.insert(name.clone(), g);
            }
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_broadcast(*a, g, 1.0, grads);
                self.acc_broadcast(*b, g, 1.0, grads);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(*a, g, 1.0, grads);
                self.acc_broadcast(*b, g, -1.0, grads);
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let at = |x: &[f64], j: usize| if x.len() == 1 { x[0] } else { x[j] };
                if self.requires_grad(*a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(j, &gj)| gj * at(xb, j)).collect();
                    self.acc_broadcast(*a, &ga, 1.0, grads);
                }
                if self.requires_grad(*b) {
                    let gb: Vec<f64> = g.iter().enumerate().map(|(j, &gj)| gj * at(xa, j)).collect();
                    self.acc_broadcast(*b, &gb, 1.0, grads);
                }
            }
            Op::Scale(a, s) => self.acc_map(*a, grads, |j| g[j] * s),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc_map(*a, grads, |j| if x[j] > 0.0 { g[j] } else { 0.0 })
            }
            Op::Sigmoid(a) => self.acc_map(*a, grads, |j| g[j] * out[j] * (1.0 - out[j])),
            Op::Tanh(a) => self.acc_map(*a, grads, |j| g[j] * (1.0 - out[j] * out[j])),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = (sa[0], sa[1]);
                let n = if sb.len() == 2 { sb[1] } else { 1 };
                if self.requires_grad(*a) {
                    // dA = G · Bᵀ
                    let buf = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, self.value(*b).data(), true, 1.0, buf);
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · G
                    let buf = slot(grads, *b, k * n);
                    gemm(k, m, n, self.value(*a).data(), true, g, false, 1.0, buf);
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                let buf = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Sum(a) => self.acc_map(*a, grads, |_| g[0]),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.acc_map(*a, grads, |_| g[0] / n)
            }
            Op::Reshape(a) => self.acc_map(*a, grads, |j| g[j]),
            Op::Slice { src, offset } => {
                if self.requires_grad(*src) {
                    let n = self.value(*src).len();
                    let buf = slot(grads, *src, n);
                    for (d, &gj) in buf[*offset..offset + g.len()].iter_mut().zip(g) {
                        *d += gj;
                    }
                }
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            } => {
                let xv = self.value(*x).data();
                let wv = self.value(*weight).data();
                let mut dx = self.requires_grad(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.requires_grad(*weight).then(|| vec![0.0; wv.len()]);
                let mut db = self.requires_grad(*bias).then(|| vec![0.0; geom.o]);
                conv::backward(geom, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                for (var, d) in [(*x, dx), (*weight, dw), (*bias, db)] {
                    if let Some(d) = d {
                        add_into(slot(grads, var, d.len()), &d);
                    }
                }
            }
            Op::AvgPool2d { x, geom, factor } => {
                if self.requires_grad(*x) {
                    let buf = slot(grads, *x, geom.len());
                    pool::avg_pool2d_backward(geom, *factor, g, buf);
                }
            }
            Op::Upsample { x, geom, factor } => {
                if self.requires_grad(*x) {
                    let buf = slot(grads, *x, geom.len());
                    pool::upsample_bilinear_backward(geom, *factor, g, buf);
                }
            }
            Op::GlobalAvgPool { x, plane } => {
                let inv = 1.0 / *plane as f64;
                self.acc_map(*x, grads, |j| g[j / plane] * inv)
            }
            Op::Mask { x, mask } => self.acc_map(*x, grads, |j| g[j] * mask[j]),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => self.acc_map(*logits, grads, |j| {
                let onehot = if j == *label { 1.0 } else { 0.0 };
                g[0] * (probs[j] - onehot)
            }),
        }
    }

    fn acc_map(&self, v: Var, grads: &mut [Option<Vec<f64>>], f: impl Fn(usize) -> f64) {
        if !self.requires_grad(v) {
            return;
        }
        let n = self.value(v).len();
        let buf = slot(grads, v, n);
        for (j, d) in buf.iter_mut().enumerate() {
            *d += f(j);
        }
    }

    /// Accumulates `sign · g` into `v`, summing when `v` was broadcast.
    fn acc_broadcast(&self, v: Var, g: &[f64], sign: f64, grads: &mut [Option<Vec<f64>>]) {
        if !self.requires_grad(v) {
            return;
        }
        let n = self.value(v).len();
        let buf = slot(grads, v, n);
        if n == g.len() {
            for (d, &gj) in buf.iter_mut().zip(g) {
                *d += sign * gj;
            }
        } else {
            buf[0] += sign * pairwise_sum(g);
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a differentiable leaf, `None` if the root does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}
