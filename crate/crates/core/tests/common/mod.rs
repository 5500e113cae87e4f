//! Shared fixtures and independent reference computations.
#![allow(dead_code)]

use mfa::{FaComponent, MfaModel};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| normal(rng))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| normal(rng))
}

pub fn random_component(rng: &mut ChaCha8Rng, d: usize, l: usize) -> FaComponent {
    let mean = normal_vec(rng, d);
    let loadings = normal_mat(rng, d, l) * 0.8;
    let noise_var = Array1::from_shape_fn(d, |_| (rng.gen_range(-1.5..0.5f64)).exp());
    FaComponent::new(mean, loadings, noise_var).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, k: usize, d: usize, l: usize) -> MfaModel {
    let comps = (0..k).map(|_| random_component(rng, d, l)).collect();
    let logits = Array1::from_shape_fn(k, |_| rng.gen_range(-1.0..1.0));
    MfaModel::from_log_weights(comps, logits).unwrap()
}

/// Rows drawn near the model's means, so both quadratic terms matter.
pub fn points_near(rng: &mut ChaCha8Rng, model: &MfaModel, n: usize) -> Array2<f64> {
    let d = model.dim();
    let k = model.n_components();
    let mut x = normal_mat(rng, n, d) * 1.5;
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row += &model.component(i % k).mean;
    }
    x
}

/// Gaussian log density through the dense covariance `A A^T + D`.
pub fn dense_log_prob(c: &FaComponent, x: ArrayView1<f64>) -> f64 {
    let d = c.mean.len();
    let a = DMatrix::from_fn(d, c.loadings.ncols(), |i, j| c.loadings[[i, j]]);
    let mut sigma = &a * a.transpose();
    for j in 0..d {
        sigma[(j, j)] += c.noise_var[j];
    }
    let chol = sigma.cholesky().expect("covariance is positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let diff = DVector::from_fn(d, |j, _| x[j] - c.mean[j]);
    let maha = diff.dot(&chol.solve(&diff));
    -0.5 * (d as f64 * LN_2PI + logdet + maha)
}

pub fn dense_mixture(model: &MfaModel, x: ArrayView2<f64>) -> (f64, Vec<f64>) {
    let per: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|row| {
            let terms: Vec<f64> = model
                .components()
                .iter()
                .zip(model.log_pi().iter())
                .map(|(c, lp)| lp + dense_log_prob(c, row))
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
        })
        .collect();
    (per.iter().sum(), per)
}

/// `argmin_z |x - A z - mu|^2_{D^-1} + |z|^2` as a stacked least-squares
/// problem solved by SVD.
pub fn regularized_lsq(c: &FaComponent, x: ArrayView1<f64>) -> Array1<f64> {
    let (d, l) = c.loadings.dim();
    let mut m = DMatrix::zeros(d + l, l);
    let mut b = DVector::zeros(d + l);
    for j in 0..d {
        let w = c.noise_var[j].sqrt().recip();
        for k in 0..l {
            m[(j, k)] = w * c.loadings[[j, k]];
        }
        b[j] = w * (x[j] - c.mean[j]);
    }
    for k in 0..l {
        m[(d + k, k)] = 1.0;
    }
    let z = m.svd(true, true).solve(&b, 1e-14).unwrap();
    Array1::from_iter(z.iter().copied())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// A component whose loadings have the given column scale and isotropic noise.
pub fn planted_component(rng: &mut ChaCha8Rng, d: usize, l: usize, offset: f64, scale: f64, noise: f64) -> FaComponent {
    let mean = normal_vec(rng, d) + offset;
    let loadings = normal_mat(rng, d, l) * scale;
    FaComponent::new(mean, loadings, Array1::from_elem(d, noise)).unwrap()
}

/// Points of an 8-component isotropic 2-D mixture on a circle of radius 5.
pub fn ring_gmm(rng: &mut dyn rand::RngCore, n: usize, modes: &[usize]) -> Array2<f64> {
    let mut x = Array2::zeros((n, 2));
    for mut row in x.rows_mut() {
        let m = modes[rng.gen_range(0..modes.len())] as f64;
        let t = m * std::f64::consts::TAU / 8.0;
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        row[0] = 5.0 * t.cos() + 0.5 * e0;
        row[1] = 5.0 * t.sin() + 0.5 * e1;
    }
    x
}

/// Four isotropic 2-D blobs at the corners of a square of side 8.
pub fn four_blobs(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let centers = [(0.0, 0.0), (8.0, 0.0), (0.0, 8.0), (8.0, 8.0)];
    let mut x = Array2::zeros((n, 2));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let (cx, cy) = centers[i % 4];
        row[0] = cx + 0.7 * normal(rng);
        row[1] = cy + 0.4 * normal(rng) + 0.3 * (row[0] - cx);
    }
    x
}

/// Smooth random grayscale image in [0, 1] with edges and texture.
pub fn natural_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array1<f64> {
    let (fx, fy, ph) = (rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.0..6.0));
    let edge = rng.gen_range(w / 4..3 * w / 4);
    Array1::from_shape_fn(h * w, |p| {
        let (y, x) = ((p / w) as f64, (p % w) as f64);
        let base = 0.5 + 0.25 * (fx * x + ph).sin() * (fy * y).cos();
        let step = if (p % w) > edge { 0.2 } else { 0.0 };
        (base + step + 0.05 * normal(rng)).clamp(0.0, 1.0)
    })
}

pub fn assert_all_close<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= tol, "{a} vs {b}");
    }
}

/// Worst relative disagreement between the analytic gradient of the mean NLL
/// and central differences with step `h`, per parameter class
/// (means, loadings, log noise, logits). Each class is compared as
/// `|g - fd| / max(|fd|, 1)` elementwise and `|g - fd| / |fd|` in norm,
/// whichever is larger.
pub fn gradient_check(model: &MfaModel, batch: ArrayView2<f64>, h: f64) -> [f64; 4] {
    use mfa::train::{nll_and_grad, FlatParams};
    let params = FlatParams::from_model(model);
    let (_, grad) = nll_and_grad(&params, batch).unwrap();
    let k = model.n_components();
    let (d, l) = (model.dim(), model.latent_dim());
    let class_of = |idx: usize| -> usize {
        let per = d + d * l + d;
        if idx >= k * per {
            3
        } else {
            let r = idx % per;
            if r < d {
                0
            } else if r < d + d * l {
                1
            } else {
                2
            }
        }
    };
    let mut diff2 = [0.0; 4];
    let mut norm2 = [0.0; 4];
    let mut worst = [0.0f64; 4];
    for idx in 0..params.as_slice().len() {
        let mut p = params.clone();
        p.as_mut_slice()[idx] += h;
        let up = nll_and_grad(&p, batch).unwrap().0;
        p.as_mut_slice()[idx] -= 2.0 * h;
        let down = nll_and_grad(&p, batch).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        let g = grad.as_slice()[idx];
        let c = class_of(idx);
        diff2[c] += (g - fd) * (g - fd);
        norm2[c] += fd * fd;
        worst[c] = worst[c].max((g - fd).abs() / fd.abs().max(1.0));
    }
    let mut out = [0.0; 4];
    for c in 0..4 {
        let normwise = if norm2[c] > 0.0 { (diff2[c] / norm2[c]).sqrt() } else { diff2[c].sqrt() };
        out[c] = worst[c].max(normwise);
    }
    out
}

/// Locates an MNIST IDX file under `$MFA_DATA_DIR` or the workspace `data/mnist`.
pub fn mnist_file(name: &str) -> Option<std::path::PathBuf> {
    let mut dirs = Vec::new();
    if let Some(d) = std::env::var_os(mfa::io::DATA_DIR_ENV) {
        let d = std::path::PathBuf::from(d);
        dirs.push(d.join("mnist"));
        dirs.push(d);
    }
    dirs.push(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dirs.into_iter().map(|d| d.join(name)).find(|p| p.is_file())
}
