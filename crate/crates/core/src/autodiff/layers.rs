//! Dense and LSTM building blocks.
//!
//! Each layer owns its parameters. To run it on a tape, `bind` registers the
//! parameters once and returns node handles; the bound form is then applied
//! to batched `[B, features]` inputs. The plain `forward`/`step` methods run a
//! single example on a throwaway tape.

use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};
use crate::error::{Result, TfnError};
use crate::rng::Rng;
use crate::tensor::{Tensor, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

/// Glorot/Xavier uniform matrix `[rows, cols]`, bound `sqrt(6 / (rows + cols))`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(TfnError::dim("dense weight rank", 2, weight.shape().len()));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(TfnError::dim("dense bias", weight.shape()[0], format!("{:?}", bias.shape())));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn xavier(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        DenseLayer {
            weight: xavier_uniform(output, input, rng),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundDense {
        BoundDense {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
            activation: self.activation,
            input_dim: self.input_dim(),
        }
    }

    /// `activation(weight · x + bias)` for one example.
    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xn = tape.constant(Tensor::row_vector(x.to_vec()));
        let y = bound.forward(&mut tape, xn)?;
        Ok(Tensor::vector(tape.value(y).data().to_vec()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: NodeId,
    pub bias: NodeId,
    activation: Activation,
    input_dim: usize,
}

impl BoundDense {
    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        let got = tape.value(x).cols();
        if got != self.input_dim {
            return Err(TfnError::dim("dense layer input", self.input_dim, got));
        }
        let z = tape.matmul_t(x, self.weight)?;
        let z = tape.add_bias(z, self.bias)?;
        match self.activation {
            Activation::Relu => tape.relu(z),
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::Identity => Ok(z),
        }
    }
}

/// LSTM with a forget gate. Gate rows are stacked in the order
/// input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `[e_dim, word_dim]`, applied to the raw word vector.
    pub input_projection: Tensor,
    /// `[4 h, e_dim + h]`, applied to `[projected word; h_prev]`.
    pub gate_weights: Tensor,
    /// `[4 h]`.
    pub gate_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

impl LstmCell {
    pub fn new(input_projection: Tensor, gate_weights: Tensor, gate_bias: Tensor) -> Result<Self> {
        let (ps, gs) = (input_projection.shape(), gate_weights.shape());
        if ps.len() != 2 || gs.len() != 2 {
            return Err(TfnError::dim("lstm weight rank", 2, format!("{ps:?}/{gs:?}")));
        }
        let rows = gate_bias.len();
        if rows == 0 || !rows.is_multiple_of(4) || gs[0] != rows {
            return Err(TfnError::dim("lstm gate rows", "4 * hidden, matching bias", format!("{:?} / {rows}", gs)));
        }
        let hidden = rows / 4;
        if gs[1] != ps[0] + hidden {
            return Err(TfnError::dim("lstm gate columns", ps[0] + hidden, gs[1]));
        }
        Ok(LstmCell {
            input_projection,
            gate_weights,
            gate_bias,
        })
    }

    /// Xavier weights, zero bias except 1.0 on the forget gate.
    pub fn xavier(word_dim: usize, projection_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut gate_bias = Tensor::zeros(&[4 * hidden]);
        gate_bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmCell {
            input_projection: xavier_uniform(projection_dim, word_dim, rng),
            gate_weights: xavier_uniform(4 * hidden, projection_dim + hidden, rng),
            gate_bias,
        }
    }

    pub fn zeros(word_dim: usize, projection_dim: usize, hidden: usize) -> Self {
        LstmCell {
            input_projection: Tensor::zeros(&[projection_dim, word_dim]),
            gate_weights: Tensor::zeros(&[4 * hidden, projection_dim + hidden]),
            gate_bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.gate_bias.len() / 4
    }

    pub fn word_dim(&self) -> usize {
        self.input_projection.shape()[1]
    }

    pub fn projection_dim(&self) -> usize {
        self.input_projection.shape()[0]
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundLstm {
        BoundLstm {
            input_projection: tape.param(&self.input_projection),
            gate_weights: tape.param(&self.gate_weights),
            gate_bias: tape.param(&self.gate_bias),
            hidden: self.hidden(),
            word_dim: self.word_dim(),
        }
    }

    /// One recurrence step for a single example.
    pub fn step(&self, x: &[f64], prev: &LstmState) -> Result<LstmState> {
        let hdim = self.hidden();
        if prev.h.len() != hdim || prev.c.len() != hdim {
            return Err(TfnError::dim("lstm state", hdim, format!("{}/{}", prev.h.len(), prev.c.len())));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xn = tape.constant(Tensor::row_vector(x.to_vec()));
        let h = tape.constant(Tensor::row_vector(prev.h.data().to_vec()));
        let c = tape.constant(Tensor::row_vector(prev.c.data().to_vec()));
        let (h, c) = bound.step(&mut tape, xn, h, c)?;
        Ok(LstmState {
            h: Tensor::vector(tape.value(h).data().to_vec()),
            c: Tensor::vector(tape.value(c).data().to_vec()),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    pub input_projection: NodeId,
    pub gate_weights: NodeId,
    pub gate_bias: NodeId,
    hidden: usize,
    word_dim: usize,
}

impl BoundLstm {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Batched step: `x: [B, word_dim]`, `h, c: [B, hidden]`; returns `(h_t, c_t)`.
    pub fn step(&self, tape: &mut Tape<'_>, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let got = tape.value(x).cols();
        if got != self.word_dim {
            return Err(TfnError::dim("lstm input", self.word_dim, got));
        }
        let hd = self.hidden;
        let projected = tape.matmul_t(x, self.input_projection)?;
        let joined = tape.concat_cols(&[projected, h])?;
        let pre = tape.matmul_t(joined, self.gate_weights)?;
        let pre = tape.add_bias(pre, self.gate_bias)?;
        let i = tape.slice_cols(pre, 0, hd)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(pre, hd, hd)?;
        let f = tape.sigmoid(f)?;
        let o = tape.slice_cols(pre, 2 * hd, hd)?;
        let o = tape.sigmoid(o)?;
        let m = tape.slice_cols(pre, 3 * hd, hd)?;
        let m = tape.tanh(m)?;
        let kept = tape.mul(f, c)?;
        let written = tape.mul(i, m)?;
        let c_next = tape.add(kept, written)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
