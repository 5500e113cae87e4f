//! Leading eigenpairs of a sample covariance without forming it when `d` is large.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{from_dmatrix, to_dmatrix};

/// Dense covariance eigensolver below this dimension.
const DENSE_DIM: usize = 1024;
/// Gram-matrix eigensolver below this sample count.
const GRAM_ROWS: usize = 2048;
const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 6;

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Leading eigenvalues, descending, clamped at zero.
    pub values: Array1<f64>,
    /// `d x l`, orthonormal columns.
    pub vectors: Array2<f64>,
    /// Trace of the covariance (total variance).
    pub trace: f64,
}

/// Top-`l` eigenpairs of `centered^T centered / n`, `centered` being `n x d`
/// rows with zero column means. Eigenvector signs are fixed so that each
/// column's largest-magnitude entry is positive.
pub fn top_eigen(centered: ArrayView2<f64>, l: usize) -> EigenDecomposition {
    let (n, d) = centered.dim();
    let trace = centered.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    // Constant dimensions carry no variance; leaving them out also keeps the
    // dense eigensolver away from all-zero rows and columns.
    let active: Vec<usize> = (0..d)
        .filter(|&j| centered.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let mut values = Array1::zeros(l);
    let mut vectors = Array2::zeros((d, l));
    let la = l.min(active.len());
    if la > 0 {
        let sub = centered.select(Axis(1), &active);
        let (sub_values, sub_vectors) = solve(sub.view(), la);
        values.slice_mut(ndarray::s![..la]).assign(&sub_values);
        for (r, &j) in active.iter().enumerate() {
            vectors.slice_mut(ndarray::s![j, ..la]).assign(&sub_vectors.row(r));
        }
    }
    orthonormal_fill(&mut vectors);
    for mut col in vectors.columns_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    EigenDecomposition {
        values,
        vectors,
        trace,
    }
}

fn solve(centered: ArrayView2<f64>, l: usize) -> (Array1<f64>, Array2<f64>) {
    let (n, d) = centered.dim();
    let (values, vectors) = if d <= DENSE_DIM {
        let cov = centered.t().dot(&centered) / n.max(1) as f64;
        leading_pairs(to_dmatrix(cov.view()), l)
    } else if n <= GRAM_ROWS {
        gram_pairs(centered, l)
    } else {
        randomized_pairs(centered, l)
    };
    if values.iter().chain(vectors.iter()).all(|v| v.is_finite()) {
        (values, vectors)
    } else {
        randomized_pairs(centered, l)
    }
}

/// Sorted leading eigenpairs of a small symmetric matrix.
fn leading_pairs(m: DMatrix<f64>, l: usize) -> (Array1<f64>, Array2<f64>) {
    let dim = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut values = Array1::zeros(l);
    let mut vectors = Array2::zeros((dim, l));
    for (k, &idx) in order.iter().take(l).enumerate() {
        let v = eig.eigenvalues[idx];
        values[k] = if v.is_nan() { v } else { v.max(0.0) };
        for r in 0..dim {
            vectors[[r, k]] = eig.eigenvectors[(r, idx)];
        }
    }
    (values, vectors)
}

fn gram_pairs(centered: ArrayView2<f64>, l: usize) -> (Array1<f64>, Array2<f64>) {
    let n = centered.nrows();
    let gram = centered.dot(&centered.t()) / n as f64;
    let (values, small) = leading_pairs(to_dmatrix(gram.view()), l);
    // u = X^T v / sqrt(n lambda)
    let mut vectors = centered.t().dot(&small);
    for (mut col, &lam) in vectors.columns_mut().into_iter().zip(values.iter()) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 && lam > 0.0 {
            col /= norm;
        } else {
            col.fill(0.0);
        }
    }
    orthonormal_fill(&mut vectors);
    (values, vectors)
}

fn randomized_pairs(centered: ArrayView2<f64>, l: usize) -> (Array1<f64>, Array2<f64>) {
    let (n, d) = centered.dim();
    let width = (l + OVERSAMPLE).min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis = Array2::from_shape_fn((d, width), |_| StandardNormal.sample(&mut rng));
    orthonormalize(&mut basis);
    for _ in 0..POWER_ITERS {
        basis = centered.t().dot(&centered.dot(&basis));
        orthonormalize(&mut basis);
    }
    let projected = centered.dot(&basis);
    let small = projected.t().dot(&projected) / n as f64;
    let (values, rot) = leading_pairs(to_dmatrix(small.view()), l);
    let mut vectors = basis.dot(&rot);
    orthonormal_fill(&mut vectors);
    (values, vectors)
}

/// Thin QR orthonormalization of the columns.
fn orthonormalize(m: &mut Array2<f64>) {
    let q = to_dmatrix(m.view()).qr().q();
    *m = from_dmatrix(&q);
}

/// Replaces zero columns with unit vectors orthogonal to the others.
fn orthonormal_fill(m: &mut Array2<f64>) {
    let (d, l) = m.dim();
    for k in 0..l {
        if m.column(k).dot(&m.column(k)) > 0.5 {
            continue;
        }
        for e in 0..d {
            let mut cand = Array1::<f64>::zeros(d);
            cand[e] = 1.0;
            for j in 0..l {
                if j != k {
                    let col = m.column(j).to_owned();
                    let proj = col.dot(&cand);
                    cand.scaled_add(-proj, &col);
                }
            }
            let norm = cand.dot(&cand).sqrt();
            if norm > 1e-6 {
                m.column_mut(k).assign(&(cand / norm));
                break;
            }
        }
    }
}

pub(crate) fn column_means(x: ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty")
}
