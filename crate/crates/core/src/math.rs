//! Small numerical helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, Dyn};
use ndarray::{Array2, ArrayView2};

/// `log(sum(exp(v)))`, shifted by the maximum so that inputs of magnitude
/// 1e5 or more neither overflow nor underflow. Returns `-inf` for an empty
/// slice or one holding only `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place into probabilities. Returns the log normalizer.
pub fn softmax_in_place(values: &mut [f64]) -> f64 {
    let lse = logsumexp(values);
    for v in values.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// Index of the largest value, lowest index on ties. NaNs never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

pub(crate) fn to_dmatrix(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Cholesky factor of a small symmetric matrix, `None` when not positive definite.
pub(crate) fn cholesky(m: ArrayView2<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(to_dmatrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_handles_extremes() {
        let v = [1e5, 1e5];
        assert!((logsumexp(&v) - (1e5 + 2f64.ln())).abs() < 1e-9);
        let v = [-1e5, -1e5 - 1.0];
        let expect = -1e5 + (1.0 + (-1.0f64).exp()).ln();
        assert!((logsumexp(&v) - expect).abs() < 1e-9);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 0.0]), 1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = [0.3, -2.0, 7.5, 1e4];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
