//! Mixture of Factor Analyzers: model types and linear-in-`d` likelihood kernels.
//!
//! Each component is the Gaussian `N(mu, A A^T + D)` with a `d x l` loading
//! matrix `A` and diagonal noise variances `D`. Nothing here ever forms a
//! `d x d` matrix: the inverse covariance is applied through the Woodbury
//! identity with the `l x l` matrix `L = I + A^T D^-1 A`, and the
//! log-determinant comes from the matrix determinant lemma,
//! `log det(A A^T + D) = log det L + sum_j log D_j`.


use nalgebra::{Cholesky, DVector, Dyn};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};
use crate::math::{self, logsumexp};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows processed per block in batch likelihood evaluation.
const ROW_BLOCK: usize = 512;

/// One factor analyzer: `x = A z + mu + eps`, `z ~ N(0, I_l)`, `eps ~ N(0, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaComponent {
    pub mean: Array1<f64>,
    /// `d x l` scale (loading) matrix.
    pub loadings: Array2<f64>,
    /// Diagonal of `D`, strictly positive variances.
    pub noise_var: Array1<f64>,
}

impl FaComponent {
    pub fn new(mean: Array1<f64>, loadings: Array2<f64>, noise_var: Array1<f64>) -> Result<Self> {
        let d = mean.len();
        ensure_dim("loadings rows", d, loadings.nrows())?;
        ensure_dim("noise variances", d, noise_var.len())?;
        if loadings.ncols() >= d {
            return Err(Error::InvalidArgument(format!(
                "latent dimension {} must be smaller than data dimension {d}",
                loadings.ncols()
            )));
        }
        if !mean.iter().chain(loadings.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("component parameters".into()));
        }
        if !noise_var.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise variances must be finite and strictly positive".into(),
            ));
        }
        Ok(Self {
            mean,
            loadings,
            noise_var,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.loadings.ncols()
    }

    /// Precomputes the Woodbury quantities. `index` only labels errors.
    pub fn kernel(&self, index: usize) -> Result<ComponentKernel<'_>> {
        ComponentKernel::new(self, index)
    }

    /// `A z + mu`, no noise.
    pub fn decode(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        ensure_dim("latent vector", self.latent_dim(), z.len())?;
        Ok(self.loadings.dot(&z) + &self.mean)
    }

    /// Gaussian posterior `p(z | x)`: mean `L^-1 A^T D^-1 (x - mu)`, covariance `L^-1`.
    pub fn latent_posterior(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let kernel = self.kernel(0)?;
        kernel.posterior(x)
    }

    /// Log-density of `x` in nats.
    pub fn log_prob(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.kernel(0)?.log_prob(x)
    }
}

/// Per-component quantities that do not depend on the data point.
pub struct ComponentKernel<'a> {
    comp: &'a FaComponent,
    inv_noise: Array1<f64>,
    /// `D^-1 A`, `d x l`.
    scaled_loadings: Array2<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `L^-1`, `l x l`, used for batched right-multiplication.
    inv_l: Array2<f64>,
    log_det_cov: f64,
}

impl<'a> ComponentKernel<'a> {
    fn new(comp: &'a FaComponent, index: usize) -> Result<Self> {
        let l = comp.latent_dim();
        let inv_noise = comp.noise_var.mapv(|v| 1.0 / v);
        let mut scaled_loadings = comp.loadings.as_standard_layout().into_owned();
        Zip::from(scaled_loadings.rows_mut())
            .and(&inv_noise)
            .for_each(|mut row, &w| row *= w);
        let mut inner = comp.loadings.t().dot(&scaled_loadings);
        for i in 0..l {
            inner[[i, i]] += 1.0;
        }
        if !inner.iter().all(|v| v.is_finite()) {
            return Err(Error::NotPositiveDefinite { component: index });
        }
        let chol = math::cholesky(inner.view())
            .ok_or(Error::NotPositiveDefinite { component: index })?;
        let log_det_l: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det_cov = log_det_l + comp.noise_var.iter().map(|v| v.ln()).sum::<f64>();
        let inv_l = math::from_dmatrix(&chol.inverse());
        Ok(Self {
            comp,
            inv_noise,
            scaled_loadings,
            chol,
            inv_l,
            log_det_cov,
        })
    }

    pub fn component(&self) -> &FaComponent {
        self.comp
    }

    /// `log det(A A^T + D)`.
    pub fn log_det_cov(&self) -> f64 {
        self.log_det_cov
    }

    pub fn inv_noise(&self) -> &Array1<f64> {
        &self.inv_noise
    }

    /// `D^-1 A`.
    pub fn scaled_loadings(&self) -> &Array2<f64> {
        &self.scaled_loadings
    }

    /// `L^-1` as a dense `l x l` matrix.
    pub fn inv_l(&self) -> &Array2<f64> {
        &self.inv_l
    }

    fn log_norm(&self) -> f64 {
        -0.5 * (self.comp.dim() as f64 * LN_2PI + self.log_det_cov)
    }

    fn solve_l(&self, rhs: &[f64]) -> Array1<f64> {
        let sol = self.chol.solve(&DVector::from_column_slice(rhs));
        Array1::from(sol.as_slice().to_vec())
    }

    /// `(x - mu)^T Sigma^-1 (x - mu)` in `O(d l + l^2)`.
    pub fn mahalanobis(&self, x: ArrayView1<f64>) -> Result<f64> {
        ensure_dim("data vector", self.comp.dim(), x.len())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("data vector".into()));
        }
        let centered = &x - &self.comp.mean;
        let quad: f64 = Zip::from(&centered)
            .and(&self.inv_noise)
            .fold(0.0, |acc, &c, &w| acc + c * c * w);
        let proj = self.scaled_loadings.t().dot(&centered);
        let solved = self.solve_l(proj.as_slice().expect("contiguous"));
        Ok((quad - proj.dot(&solved)).max(0.0))
    }

    /// Same arithmetic as the batched path, so a row scores identically
    /// alone or inside a mixture.
    pub fn log_prob(&self, x: ArrayView1<f64>) -> Result<f64> {
        ensure_dim("data vector", self.comp.dim(), x.len())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("data vector".into()));
        }
        Ok(self.log_prob_rows(x.insert_axis(Axis(0)))[0])
    }

    /// Log-density of every row of `x`. The caller guarantees finite input.
    pub fn log_prob_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        kernels_log_prob(std::slice::from_ref(self), x).column(0).to_owned()
    }

    pub fn posterior(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        ensure_dim("data vector", self.comp.dim(), x.len())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("data vector".into()));
        }
        let centered = &x - &self.comp.mean;
        let proj = self.scaled_loadings.t().dot(&centered);
        let z = self.solve_l(proj.as_slice().expect("contiguous"));
        // Symmetrize: the Cholesky inverse is symmetric only up to rounding.
        let cov = (&self.inv_l + &self.inv_l.t()) * 0.5;
        Ok((z, cov))
    }

    /// Draws `z ~ N(mean, L^-1)` given standard normal `eps`.
    pub(crate) fn posterior_draw(&self, mean: &Array1<f64>, eps: &[f64]) -> Array1<f64> {
        // L = C C^T, so C^-T eps has covariance L^-1.
        let l = self.chol.l();
        let upper = l.transpose();
        let offset = upper
            .solve_upper_triangular(&DVector::from_column_slice(eps))
            .expect("Cholesky factor has a positive diagonal");
        mean + &Array1::from(offset.as_slice().to_vec())
    }
}

/// `sum_j w_j (x_j - m_j)^2` with independent partial sums.
fn weighted_sq_dist(x: &[f64], m: &[f64], w: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (xc, mc, wc) = (x.chunks_exact(4), m.chunks_exact(4), w.chunks_exact(4));
    let tail: f64 = xc
        .remainder()
        .iter()
        .zip(mc.remainder())
        .zip(wc.remainder())
        .map(|((a, b), c)| (a - b) * (a - b) * c)
        .sum();
    for ((a, b), c) in xc.zip(mc).zip(wc) {
        for i in 0..4 {
            let v = a[i] - b[i];
            acc[i] += v * v * c[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `N x K` matrix of `log N(x_n | mu_i, A_i A_i^T + D_i)`. The caller
/// guarantees finite input.
///
/// `(D^-1 A)^T x` is formed for all components with a single product per
/// row block; the offsets `(D^-1 A)^T mu` are subtracted afterwards.
pub(crate) fn kernels_log_prob(kernels: &[ComponentKernel<'_>], x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let k = kernels.len();
    let l = kernels.first().map_or(0, |k| k.comp.latent_dim());
    let mut stacked = Array2::<f64>::zeros((d, k * l));
    let mut offsets = Vec::with_capacity(k);
    for (i, ker) in kernels.iter().enumerate() {
        stacked.slice_mut(s![.., i * l..(i + 1) * l]).assign(&ker.scaled_loadings);
        offsets.push(ker.scaled_loadings.t().dot(&ker.comp.mean));
    }
    let means: Vec<Array1<f64>> = kernels.iter().map(|k| k.comp.mean.as_standard_layout().into_owned()).collect();
    let norms: Vec<f64> = kernels.iter().map(|k| k.log_norm()).collect();
    let mut out = Array2::<f64>::zeros((n, k));
    out.axis_chunks_iter_mut(Axis(0), ROW_BLOCK)
        .into_par_iter()
        .zip(x.axis_chunks_iter(Axis(0), ROW_BLOCK).into_par_iter())
        .for_each(|(mut out_block, block)| {
            let block = block.as_standard_layout();
            let proj = block.dot(&stacked);
            let mut p = vec![0.0; l];
            for ((row, proj_row), mut out_row) in block.rows().into_iter().zip(proj.rows()).zip(out_block.rows_mut()) {
                let row = row.to_slice().expect("standard layout");
                for (i, ker) in kernels.iter().enumerate() {
                    let quad = weighted_sq_dist(
                        row,
                        means[i].as_slice().expect("owned"),
                        ker.inv_noise.as_slice().expect("owned"),
                    );
                    for a in 0..l {
                        p[a] = proj_row[i * l + a] - offsets[i][a];
                    }
                    let mut explained = 0.0;
                    for a in 0..l {
                        let mut q = 0.0;
                        for b in 0..l {
                            q += ker.inv_l[[a, b]] * p[b];
                        }
                        explained += p[a] * q;
                    }
                    out_row[i] = norms[i] - 0.5 * (quad - explained).max(0.0);
                }
            }
        });
    out
}

/// Posterior over the latent factors of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub component_index: usize,
    pub z_map: Array1<f64>,
    pub posterior_cov: Array2<f64>,
}

/// A mixture of `K` factor analyzers sharing data dimension `d` and latent dimension `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfaModel {
    components: Vec<FaComponent>,
    log_pi: Array1<f64>,
}

impl MfaModel {
    /// Validates shapes and requires `logsumexp(log_pi) = 0` to within 1e-10.
    pub fn new(components: Vec<FaComponent>, log_pi: Array1<f64>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture needs at least one component".into()))?;
        let (d, l) = (first.dim(), first.latent_dim());
        for c in &components {
            ensure_dim("component data dimension", d, c.dim())?;
            ensure_dim("component latent dimension", l, c.latent_dim())?;
        }
        ensure_dim("log mixing coefficients", components.len(), log_pi.len())?;
        if !log_pi.iter().all(|v| !v.is_nan() && *v < f64::INFINITY) {
            return Err(Error::NonFinite("log mixing coefficients".into()));
        }
        let total = logsumexp(log_pi.as_slice().expect("contiguous"));
        if total.abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "mixing coefficients must sum to 1 (log-sum is {total:e})"
            )));
        }
        Ok(Self { components, log_pi })
    }

    /// Like [`MfaModel::new`] but renormalizes arbitrary log-weights.
    pub fn from_log_weights(components: Vec<FaComponent>, log_weights: Array1<f64>) -> Result<Self> {
        let lse = logsumexp(log_weights.as_slice().expect("contiguous"));
        if !lse.is_finite() {
            return Err(Error::NonFinite("mixing weights".into()));
        }
        Self::new(components, log_weights.mapv(|v| v - lse))
    }

    pub fn components(&self) -> &[FaComponent] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &FaComponent {
        &self.components[i]
    }

    pub fn log_pi(&self) -> &Array1<f64> {
        &self.log_pi
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.components[0].latent_dim()
    }

    /// Free parameters: `K [d (l + 2) + 1]`.
    pub fn n_free_params(&self) -> u64 {
        free_param_count(self.n_components(), self.dim(), self.latent_dim())
    }

    pub fn kernels(&self) -> Result<Vec<ComponentKernel<'_>>> {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| c.kernel(i))
            .collect()
    }

    /// `log pi_i + log N(x_n | mu_i, Sigma_i)` for every row and component, `N x K`.
    pub fn log_joint(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim("data columns", self.dim(), x.ncols())?;
        check_finite(x, "data matrix")?;
        let kernels = self.kernels()?;
        let mut out = kernels_log_prob(&kernels, x);
        out += &self.log_pi;
        Ok(out)
    }

    /// Returns `(sum_n log p(x_n), [log p(x_n)])`.
    pub fn log_likelihood(&self, x: ArrayView2<f64>) -> Result<(f64, Array1<f64>)> {
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("empty data matrix".into()));
        }
        let joint = self.log_joint(x)?;
        let per_sample: Array1<f64> = joint
            .rows()
            .into_iter()
            .map(|r| logsumexp(&r.to_vec()))
            .collect();
        Ok((per_sample.sum(), per_sample))
    }

    /// Posterior component probabilities for one point.
    pub fn responsibilities(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        ensure_dim("data vector", self.dim(), x.len())?;
        let mut logs = Vec::with_capacity(self.n_components());
        for (i, c) in self.components.iter().enumerate() {
            logs.push(self.log_pi[i] + c.kernel(i)?.log_prob(x)?);
        }
        math::softmax_in_place(&mut logs);
        Ok(Array1::from(logs))
    }

    /// Most responsible component for each row, lowest index on ties.
    pub fn hard_assign(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let joint = self.log_joint(x)?;
        Ok(joint
            .rows()
            .into_iter()
            .map(|r| math::argmax(&r.to_vec()))
            .collect())
    }

    pub fn latent_posterior(&self, x: ArrayView1<f64>, component: usize) -> Result<LatentPosterior> {
        let comp = self.components.get(component).ok_or_else(|| {
            Error::InvalidArgument(format!("component index {component} out of range"))
        })?;
        let (z_map, posterior_cov) = comp.kernel(component)?.posterior(x)?;
        Ok(LatentPosterior {
            component_index: component,
            z_map,
            posterior_cov,
        })
    }

    /// Draws `n` rows from the generative process. Deterministic for a seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = self.log_pi.iter().map(|v| v.exp()).collect();
        let picker = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidArgument(format!("mixing weights: {e}")))?;
        let (d, l) = (self.dim(), self.latent_dim());
        let noise_std: Vec<Array1<f64>> = self
            .components
            .iter()
            .map(|c| c.noise_var.mapv(f64::sqrt))
            .collect();
        let mut out = Array2::zeros((n, d));
        let mut z = Array1::zeros(l);
        for mut row in out.rows_mut() {
            let i = picker.sample(&mut rng);
            let comp = &self.components[i];
            z.mapv_inplace(|_| StandardNormal.sample(&mut rng));
            row.assign(&comp.loadings.dot(&z));
            row += &comp.mean;
            for (v, s) in row.iter_mut().zip(noise_std[i].iter()) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += s * e;
            }
        }
        Ok(out)
    }
}

pub fn free_param_count(k: usize, d: usize, l: usize) -> u64 {
    k as u64 * (d as u64 * (l as u64 + 2) + 1)
}

pub(crate) fn check_finite(x: ArrayView2<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Standalone form of [`FaComponent::log_prob`].
pub fn component_log_prob(x: ArrayView1<f64>, comp: &FaComponent) -> Result<f64> {
    comp.log_prob(x)
}

/// Standalone form of [`MfaModel::log_likelihood`].
pub fn mixture_log_likelihood(x: ArrayView2<f64>, model: &MfaModel) -> Result<(f64, Array1<f64>)> {
    model.log_likelihood(x)
}

/// Standalone form of [`MfaModel::responsibilities`].
pub fn responsibilities(x: ArrayView1<f64>, model: &MfaModel) -> Result<Array1<f64>> {
    model.responsibilities(x)
}

/// Standalone form of [`FaComponent::decode`].
pub fn sample_from_component(comp: &FaComponent, z: ArrayView1<f64>) -> Result<Array1<f64>> {
    comp.decode(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::PI;

    fn std_normal_1d() -> FaComponent {
        FaComponent::new(array![0.0, 0.0], array![[0.0], [0.0]], array![1.0, 1.0]).unwrap()
    }

    #[test]
    fn log_prob_at_mode_of_standard_normal() {
        let c = std_normal_1d();
        let lp = c.log_prob(array![0.0, 0.0].view()).unwrap();
        assert!((lp - (-(2.0 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn x_at_mean_has_zero_mahalanobis() {
        let c = FaComponent::new(
            array![1.0, -2.0, 0.5],
            array![[1.0, 0.3], [0.2, -1.0], [0.0, 0.7]],
            array![0.5, 2.0, 0.1],
        )
        .unwrap();
        let k = c.kernel(0).unwrap();
        assert_eq!(k.mahalanobis(c.mean.view()).unwrap(), 0.0);
        let lp = k.log_prob(c.mean.view()).unwrap();
        assert!((lp + 0.5 * (3.0 * LN_2PI + k.log_det_cov())).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_components() {
        assert!(FaComponent::new(array![0.0], array![[1.0]], array![1.0]).is_err());
        assert!(FaComponent::new(array![0.0, 0.0], array![[1.0], [0.0]], array![1.0, 0.0]).is_err());
        assert!(FaComponent::new(array![0.0, 0.0], array![[1.0], [0.0]], array![1.0]).is_err());
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let c = std_normal_1d();
        assert!(matches!(
            c.log_prob(array![f64::NAN, 0.0].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn mixing_weights_must_normalize() {
        let c = std_normal_1d();
        assert!(MfaModel::new(vec![c.clone(), c.clone()], array![0.0, 0.0]).is_err());
        let m = MfaModel::from_log_weights(vec![c.clone(), c], array![0.0, 0.0]).unwrap();
        assert!((m.log_pi()[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn decode_traverses_columns() {
        let c = FaComponent::new(array![1.0, 1.0, 1.0], array![[1.0, 0.0], [2.0, 0.0], [3.0, 5.0]], array![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(c.decode(array![0.0, 0.0].view()).unwrap(), c.mean);
        assert_eq!(c.decode(array![1.0, 0.0].view()).unwrap(), array![2.0, 3.0, 4.0]);
        assert_eq!(c.decode(array![-1.0, 0.0].view()).unwrap(), array![0.0, -1.0, -2.0]);
        assert_eq!(c.decode(array![0.0, 1.0].view()).unwrap(), array![1.0, 1.0, 6.0]);
    }

    #[test]
    fn zero_loadings_give_prior_posterior() {
        let c = std_normal_1d();
        let (z, cov) = c.latent_posterior(array![3.0, -1.0].view()).unwrap();
        assert_eq!(z, array![0.0]);
        assert_eq!(cov, array![[1.0]]);
    }

    #[test]
    fn sample_is_deterministic_and_rejects_zero() {
        let m = MfaModel::new(vec![std_normal_1d()], array![0.0]).unwrap();
        assert_eq!(m.sample(5, 3).unwrap(), m.sample(5, 3).unwrap());
        assert_ne!(m.sample(5, 3).unwrap(), m.sample(5, 4).unwrap());
        assert!(m.sample(0, 3).is_err());
    }

    #[test]
    fn parameter_count_formula() {
        assert_eq!(free_param_count(1000, 12288, 10), 147_457_000);
        assert_eq!(free_param_count(1, 2, 1), 7);
    }
}
