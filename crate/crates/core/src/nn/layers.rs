use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamBuilder, ParamId, Params};

/// One forward pass: the tape, read-only parameters and, in training mode,
/// the generator that draws dropout masks.
pub struct Session<'a> {
    pub g: Graph,
    pub params: &'a Params,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'a> Session<'a> {
    pub fn eval(params: &'a Params) -> Self {
        Session { g: Graph::new(), params, dropout_rng: None }
    }

    pub fn train(params: &'a Params, rng: ChaCha8Rng) -> Self {
        Session { g: Graph::new(), params, dropout_rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.g.param(self.params, id)
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.g.constant(value)
    }

    /// Inverted dropout; identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let (r, c) = self.g.shape(x);
        let mask = Array2::from_shape_fn((r, c), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.g.mul_const(x, mask)
    }

    pub fn backward(&self, loss: Var) -> super::Grads {
        self.g.backward(loss, self.params.len())
    }
}

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        let mut sub = b.sub(name);
        let weight = sub.uniform_fan_in("weight", d_in, d_out, d_in);
        let bias = sub.uniform_fan_in("bias", 1, d_out, d_in);
        Linear { weight, bias, d_in, d_out }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let y = s.g.matmul(x, w);
        s.g.add_row_bias(y, b)
    }

    /// Overwrite with `W = I`, `b = 0`. Requires a square layer.
    pub fn set_identity(&self, params: &mut Params) {
        assert_eq!(self.d_in, self.d_out, "identity needs a square layer");
        *params.get_mut(self.weight) = Array2::eye(self.d_in);
        params.get_mut(self.bias).fill(0.0);
    }
}

/// Row-wise layer normalisation with learned gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d: usize) -> Self {
        let mut sub = b.sub(name);
        LayerNorm { gain: sub.constant("gain", 1, d, 1.0), shift: sub.constant("shift", 1, d, 0.0) }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let n = s.g.layer_norm_rows(x, Self::EPS);
        let rows = s.g.shape(x).0;
        let gain = s.param(self.gain);
        let gain = s.g.broadcast_rows(gain, rows);
        let shift = s.param(self.shift);
        let scaled = s.g.mul(n, gain);
        s.g.add_row_bias(scaled, shift)
    }
}

/// Single-layer LSTM cell unrolled over the rows of its input.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    input: Linear,
    recurrent: ParamId,
    hidden: usize,
}

impl Lstm {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_in: usize, hidden: usize) -> Self {
        let mut sub = b.sub(name);
        let input = Linear::new(&mut sub, "input", d_in, 4 * hidden);
        let recurrent = sub.uniform_fan_in("recurrent", hidden, 4 * hidden, hidden);
        Lstm { input, recurrent, hidden }
    }

    /// Hidden states for each input row, in input order. When `reverse` is
    /// set the recurrence runs from the last row to the first.
    pub fn forward(&self, s: &mut Session<'_>, x: Var, reverse: bool) -> Var {
        let steps = s.g.shape(x).0;
        let h = self.hidden;
        let projected = self.input.forward(s, x);
        let w_hh = s.param(self.recurrent);
        let mut hidden = s.input(Array2::zeros((1, h)));
        let mut cell = s.input(Array2::zeros((1, h)));
        let mut outputs = vec![hidden; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let xt = s.g.row(projected, t);
            let rec = s.g.matmul(hidden, w_hh);
            let gates = s.g.add(xt, rec);
            let i = s.g.slice_cols(gates, 0, h);
            let f = s.g.slice_cols(gates, h, h);
            let c_in = s.g.slice_cols(gates, 2 * h, h);
            let o = s.g.slice_cols(gates, 3 * h, h);
            let i = s.g.sigmoid(i);
            let f = s.g.sigmoid(f);
            let c_in = s.g.tanh(c_in);
            let o = s.g.sigmoid(o);
            let keep = s.g.mul(f, cell);
            let write = s.g.mul(i, c_in);
            cell = s.g.add(keep, write);
            let squashed = s.g.tanh(cell);
            hidden = s.g.mul(o, squashed);
            outputs[t] = hidden;
        }
        s.g.concat_rows(&outputs)
    }
}

/// Forward and backward [`Lstm`] with concatenated outputs (`2 × hidden` wide).
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_in: usize, hidden: usize) -> Self {
        let mut sub = b.sub(name);
        BiLstm { fwd: Lstm::new(&mut sub, "fwd", d_in, hidden), bwd: Lstm::new(&mut sub, "bwd", d_in, hidden) }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let f = self.fwd.forward(s, x, false);
        let b = self.bwd.forward(s, x, true);
        s.g.concat_cols(&[f, b])
    }
}
