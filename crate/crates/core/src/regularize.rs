//! Inverted dropout and the L2 weight penalty.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Result, TfnError};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn check_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(TfnError::Config(format!("dropout probability must be in [0, 1), got {p}")))
    }
}

/// Zeroes each unit with probability `p` and scales survivors by `1 / (1 - p)`
/// while training; identity otherwise.
pub fn apply_dropout(x: &[f64], p: f64, rng: &mut Rng, training: bool) -> Result<Vec<f64>> {
    check_p(p)?;
    if !training || p == 0.0 {
        return Ok(x.to_vec());
    }
    let keep = 1.0 / (1.0 - p);
    Ok(x.iter().map(|&v| if rng.next_f64() < p { 0.0 } else { v * keep }).collect())
}

/// Training-time dropout on tape nodes. One instance owns the mask stream for
/// a whole training run.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    rng: Rng,
}

impl Dropout {
    pub fn new(p: f64, rng: Rng) -> Result<Self> {
        check_p(p)?;
        Ok(Dropout { p, rng })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn apply(&mut self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        if self.p == 0.0 {
            return Ok(x);
        }
        let shape = tape.value(x).shape().to_vec();
        let ones = vec![1.0; tape.value(x).len()];
        let mask = apply_dropout(&ones, self.p, &mut self.rng, true)?;
        let mask = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, mask)
    }
}

/// `coeff * sum(w^2)` over the given weight tensors.
pub fn l2_penalty<'a>(weights: impl IntoIterator<Item = &'a Tensor>, coeff: f64) -> Result<f64> {
    if !(coeff >= 0.0 && coeff.is_finite()) {
        return Err(TfnError::Config(format!("L2 coefficient must be non-negative, got {coeff}")));
    }
    if coeff == 0.0 {
        return Ok(0.0);
    }
    Ok(coeff * weights.into_iter().map(Tensor::sum_squares).sum::<f64>())
}

/// Adds `coeff * sum(w^2)` for each weight node to `loss` on the tape.
pub fn l2_on_tape(tape: &mut Tape<'_>, loss: NodeId, weights: &[NodeId], coeff: f64) -> Result<NodeId> {
    if coeff == 0.0 {
        return Ok(loss);
    }
    let mut total = loss;
    for &w in weights {
        let sq = tape.sum_squares(w)?;
        let scaled = tape.affine(sq, coeff, 0.0)?;
        total = tape.add(total, scaled)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_identities() {
        let x = vec![1.0, -2.0, 3.0];
        let mut rng = Rng::new(0);
        assert_eq!(apply_dropout(&x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(apply_dropout(&x, 0.9, &mut rng, false).unwrap(), x);
        assert!(apply_dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(apply_dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = Rng::new(42);
        let ones = vec![1.0; 100_000];
        let y = apply_dropout(&ones, 0.5, &mut rng, true).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn l2_values() {
        let w = Tensor::vector(vec![3.0]);
        assert_eq!(l2_penalty([&w], 0.0).unwrap(), 0.0);
        assert!((l2_penalty([&w], 0.01).unwrap() - 0.09).abs() < 1e-15);
        assert!(l2_penalty([&w], -1.0).is_err());
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let w0 = vec![0.3, -1.2, 2.0, 0.05];
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::vector(w0.clone()));
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = l2_on_tape(&mut tape, zero, &[w], 0.01).unwrap();
        let g = tape.backward(loss).unwrap();
        let numeric = crate::autodiff::finite_difference_gradient(
            |x| l2_penalty([&Tensor::vector(x.to_vec())], 0.01),
            &w0,
            1e-5,
        )
        .unwrap();
        for (a, n) in g.get(w).unwrap().data().iter().zip(&numeric) {
            assert!(crate::autodiff::relative_error(*a, *n) < 1e-6);
        }
        for (a, x) in g.get(w).unwrap().data().iter().zip(&w0) {
            assert!((a - 0.02 * x).abs() < 1e-15);
        }
    }
}
