//! Reverse-mode differentiation and the layer primitives built on it.

pub mod gradcheck;
pub mod layers;
pub mod tape;

pub use gradcheck::{finite_difference_gradient, relative_error, DEFAULT_EPS};
pub use layers::{Activation, BoundDense, BoundLstm, DenseLayer, LstmCell, LstmState};
pub use tape::{sigmoid, softmax, Gradients, NodeId, Tape, LOG_CLAMP};

use crate::tensor::{Tensor, Tensor3};

/// `T[i][j][k] = (u[i] * v[j]) * w[k]` as a `[u.len(), v.len(), w.len()]` tensor.
pub fn outer3(u: &[f64], v: &[f64], w: &[f64]) -> Tensor3 {
    let mut out = vec![0.0; u.len() * v.len() * w.len()];
    tape::outer3_into(u, v, w, &mut out);
    Tensor::new(vec![u.len(), v.len(), w.len()], out).expect("outer3 shape")
}
