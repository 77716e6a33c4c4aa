//! Single-layer LSTM.
//!
//! Gate rows are stacked in the order input, forget, cell-candidate, output:
//! rows `[0,H)` are the input gate, `[H,2H)` forget, `[2H,3H)` candidate and
//! `[3H,4H)` output.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamStore, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmSpec {
    pub name: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmSpec {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            hidden_dim,
        }
    }

    pub fn w_ih_name(&self) -> String {
        format!("{}.w_ih", self.name)
    }

    pub fn w_hh_name(&self) -> String {
        format!("{}.w_hh", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Uniform weights on `±1/sqrt(hidden_dim)`; biases zero except the
    /// forget gate, which starts at 1.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(format!("{}: dimensions must be positive", self.name)));
        }
        let h4 = 4 * self.hidden_dim;
        let bound = 1.0 / (self.hidden_dim as f64).sqrt();
        store.insert(&self.w_ih_name(), uniform(&[h4, self.input_dim], bound, rng))?;
        store.insert(&self.w_hh_name(), uniform(&[h4, self.hidden_dim], bound, rng))?;
        let mut bias = Tensor::zeros(&[h4]);
        bias.data_mut()[self.hidden_dim..2 * self.hidden_dim].fill(1.0);
        store.insert(&self.bias_name(), bias)
    }

    fn check(&self, tape: &Tape, x: Var, h: Var, c: Var) -> Result<()> {
        let ok = tape.shape(x) == [self.input_dim]
            && tape.shape(h) == [self.hidden_dim]
            && tape.shape(c) == [self.hidden_dim];
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                &self.name,
                format!(
                    "expected x [{}], h/c [{}]; got {:?}, {:?}, {:?}",
                    self.input_dim,
                    self.hidden_dim,
                    tape.shape(x),
                    tape.shape(h),
                    tape.shape(c)
                ),
            ))
        }
    }

    /// One gated update: returns `(h', c')`.
    pub fn cell(&self, tape: &mut Tape, bound: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        self.check(tape, x, h, c)?;
        let w_ih = bound.get(&self.w_ih_name())?;
        let wx = tape.matmul(w_ih, x)?;
        self.finish(tape, bound, wx, h, c)
    }

    /// Runs the cell over the rows of `xs` (`[k, input_dim]`) from a zero
    /// state, projecting all inputs with one product up front. Returns the
    /// hidden state after each step.
    pub fn sequence(&self, tape: &mut Tape, bound: &Bound, xs: Var) -> Result<Vec<Var>> {
        let s = tape.shape(xs).to_vec();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::shape(
                &self.name,
                format!("sequence input must be [k, {}], got {s:?}", self.input_dim),
            ));
        }
        let w_ih = bound.get(&self.w_ih_name())?;
        let w_ih_t = tape.transpose(w_ih)?;
        let projected = tape.matmul(xs, w_ih_t)?;
        let mut h = tape.constant(Tensor::zeros(&[self.hidden_dim]));
        let mut c = tape.constant(Tensor::zeros(&[self.hidden_dim]));
        let mut out = Vec::with_capacity(s[0]);
        for j in 0..s[0] {
            let wx = tape.row(projected, j)?;
            (h, c) = self.finish(tape, bound, wx, h, c)?;
            out.push(h);
        }
        Ok(out)
    }

    fn finish(&self, tape: &mut Tape, bound: &Bound, wx: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        let w_hh = bound.get(&self.w_hh_name())?;
        let b = bound.get(&self.bias_name())?;
        let wh = tape.matmul(w_hh, h)?;
        let pre = tape.add(wx, wh)?;
        let pre = tape.add(pre, b)?;
        let gate = |tape: &mut Tape, k: usize| tape.slice(pre, k * hd, &[hd]);
        let (i, f, g, o) = (gate(tape, 0)?, gate(tape, 1)?, gate(tape, 2)?, gate(tape, 3)?);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::rng_for;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar re-statement of the gate equations.
    fn reference_cell(
        w_ih: &[f64],
        w_hh: &[f64],
        b: &[f64],
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let pre: Vec<f64> = (0..4 * hd)
            .map(|r| {
                let a: f64 = (0..x.len()).map(|j| w_ih[r * x.len() + j] * x[j]).sum();
                let bh: f64 = (0..hd).map(|j| w_hh[r * hd + j] * h[j]).sum();
                a + bh + b[r]
            })
            .collect();
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for u in 0..hd {
            let i = sigmoid(pre[u]);
            let f = sigmoid(pre[hd + u]);
            let g = pre[2 * hd + u].tanh();
            let o = sigmoid(pre[3 * hd + u]);
            c2[u] = f * c[u] + i * g;
            h2[u] = o * c2[u].tanh();
        }
        (h2, c2)
    }

    fn zero_store(spec: &LstmSpec) -> ParamStore {
        let mut s = ParamStore::new();
        let h4 = 4 * spec.hidden_dim;
        s.insert(&spec.w_ih_name(), Tensor::zeros(&[h4, spec.input_dim])).unwrap();
        s.insert(&spec.w_hh_name(), Tensor::zeros(&[h4, spec.hidden_dim])).unwrap();
        s.insert(&spec.bias_name(), Tensor::zeros(&[h4])).unwrap();
        s
    }

    #[test]
    fn zero_params_give_zero_hidden() {
        let spec = LstmSpec::new("lstm", 3, 4);
        let store = zero_store(&spec);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(&[5.0, -2.0, 0.7]));
        let h = tape.constant(Tensor::zeros(&[4]));
        let c = tape.constant(Tensor::zeros(&[4]));
        let (h2, _) = spec.cell(&mut tape, &bound, x, h, c).unwrap();
        assert!(tape.value(h2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let spec = LstmSpec::new("lstm", 2, 3);
        let mut store = zero_store(&spec);
        let b = store.get_mut("lstm.bias").unwrap().data_mut();
        for v in &mut b[3..6] {
            *v = 20.0;
        }
        let cell = [1.0, -0.5, 2.0];
        let (_, c_ref) = reference_cell(
            store.get("lstm.w_ih").unwrap().data(),
            store.get("lstm.w_hh").unwrap().data(),
            store.get("lstm.bias").unwrap().data(),
            &[0.3, 0.9],
            &[0.0; 3],
            &cell,
        );
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(&[0.3, 0.9]));
        let h = tape.constant(Tensor::zeros(&[3]));
        let c = tape.constant(Tensor::vector(&cell));
        let (_, c2) = spec.cell(&mut tape, &bound, x, h, c).unwrap();
        for ((got, want), orig) in tape.value(c2).data().iter().zip(&c_ref).zip(&cell) {
            assert!((got - orig).abs() < 1e-8);
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        let spec = LstmSpec::new("lstm", 4, 3);
        let mut store = ParamStore::new();
        spec.init(&mut store, &mut rng_for(3, &[])).unwrap();
        store.get_mut("lstm.bias").unwrap().data_mut()[2] = 0.4;
        let (x, h, c) = ([0.1, -0.2, 0.3, 0.5], [0.2, -0.1, 0.05], [0.5, 0.0, -0.3]);
        let (h_ref, c_ref) = reference_cell(
            store.get("lstm.w_ih").unwrap().data(),
            store.get("lstm.w_hh").unwrap().data(),
            store.get("lstm.bias").unwrap().data(),
            &x,
            &h,
            &c,
        );
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let (xv, hv, cv) = (
            tape.constant(Tensor::vector(&x)),
            tape.constant(Tensor::vector(&h)),
            tape.constant(Tensor::vector(&c)),
        );
        let (h2, c2) = spec.cell(&mut tape, &bound, xv, hv, cv).unwrap();
        for (a, b) in tape.value(h2).data().iter().zip(&h_ref) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in tape.value(c2).data().iter().zip(&c_ref) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let spec = LstmSpec::new("global.lstm", 3, 2);
        let store = zero_store(&spec);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[4]));
        let h = tape.constant(Tensor::zeros(&[2]));
        let err = spec.cell(&mut tape, &bound, x, h, h).unwrap_err().to_string();
        assert!(err.contains("global.lstm"), "{err}");
    }
}
