//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use crate::error::{Result, TfnError};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every
/// coordinate of `x`.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_difference_at(f, x, &all, eps)
}

/// Central differences restricted to the listed coordinates.
pub fn finite_difference_at<F>(mut f: F, x: &[f64], coords: &[usize], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(TfnError::Config(format!("finite-difference eps must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe)?;
        probe[i] = orig - eps;
        let minus = f(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TfnError::NonFinite(format!("objective at coordinate {i}")));
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::sigmoid;

    #[test]
    fn sum_of_squares() {
        let g = finite_difference_gradient(|x| Ok(x.iter().map(|v| v * v).sum()), &[1.0, 2.0], DEFAULT_EPS).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let g = finite_difference_gradient(|x| Ok(sigmoid(x[0])), &[0.0], DEFAULT_EPS).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite_objective() {
        assert!(finite_difference_gradient(|x| Ok(x[0]), &[0.0], 0.0).is_err());
        assert!(finite_difference_gradient(|x| Ok(x[0].ln()), &[0.0], DEFAULT_EPS).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }
}
