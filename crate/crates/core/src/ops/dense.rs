//! Affine map, dropout and the classification loss.

use std::sync::Arc;

use rand::Rng as _;

use crate::autodiff::tape::Op;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamStore, Rng};
use crate::tensor::Tensor;

/// `weight · x + bias` with `weight` `[out, in]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSpec {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearSpec {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Uniform weights on `±1/sqrt(in_dim)`, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("{}: dimensions must be positive", self.name)));
        }
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        store.insert(&self.weight_name(), uniform(&[self.out_dim, self.in_dim], bound, rng))?;
        store.insert(&self.bias_name(), Tensor::zeros(&[self.out_dim]))
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let w = bound.get(&self.weight_name())?;
        let b = bound.get(&self.bias_name())?;
        tape.linear(x, w, b)
    }
}

impl Tape {
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(weight, x)?;
        if self.shape(y) != self.shape(bias) {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: self.shape(y).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        self.add(y, bias)
    }

    /// Inverted dropout. Identity when `!training` or `p == 0`; otherwise each
    /// entry is kept with probability `1 - p` and scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let out = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        );
        Ok(self.push(
            out,
            &[x],
            Op::Mask {
                x,
                mask: Arc::new(mask),
            },
        ))
    }

    /// `-log softmax(logits)[label]` with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 1 {
            return Err(Error::Contract(format!("logits must be a vector, got {:?}", z.shape())));
        }
        if label >= z.len() {
            return Err(Error::Contract(format!("label {label} out of range for {} classes", z.len())));
        }
        let (loss, probs) = softmax_xent(z.data(), label);
        Ok(self.push(
            Tensor::scalar(loss),
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }
}

/// Loss and softmax probabilities.
pub(crate) fn softmax_xent(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (z[label] - m);
    (loss, exps.iter().map(|e| e / total).collect())
}
