//! Mean negative log-likelihood of a mini-batch and its analytic gradient.
//!
//! Parameters are unconstrained: means and loadings directly, noise variances
//! as `D = exp(s)`, and mixing coefficients as `pi = softmax(logits)`.
//! For a component with `beta_n = Sigma^-1 (x_n - mu)` (Woodbury form):
//!
//! * `d log p / d mu = beta`
//! * `d log p / d A  = beta (beta^T A) - D^-1 A L^-1`
//! * `d log p / d D_j = (beta_j^2 - [Sigma^-1]_jj) / 2`
//!
//! and the mixture weights each term by its responsibility `r_{n,i}`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rayon::prelude::*;

use super::LOG_NOISE_CLAMP;
use crate::error::{ensure_dim, Error, Result};
use crate::math::logsumexp;
use crate::model::{kernels_log_prob, ComponentKernel, FaComponent, MfaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub k: usize,
    pub d: usize,
    pub l: usize,
}

impl ParamLayout {
    fn block(&self) -> usize {
        self.d * (self.l + 2)
    }

    pub fn len(&self) -> usize {
        self.k * self.block() + self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn mean_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.block();
        start..start + self.d
    }

    fn loadings_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.block() + self.d;
        start..start + self.d * self.l
    }

    fn log_noise_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.block() + self.d * (self.l + 1);
        start..start + self.d
    }

    fn logits_range(&self) -> std::ops::Range<usize> {
        let start = self.k * self.block();
        start..start + self.k
    }
}

/// All trainable values in one contiguous buffer. Per component: mean `[d]`,
/// loadings `[d x l]` row-major, log noise variances `[d]`; then `K` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    layout: ParamLayout,
    data: Vec<f64>,
}

impl FlatParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            data: vec![0.0; layout.len()],
        }
    }

    pub fn from_model(model: &MfaModel) -> Self {
        let layout = ParamLayout {
            k: model.n_components(),
            d: model.dim(),
            l: model.latent_dim(),
        };
        let mut p = Self::zeros(layout);
        for (i, c) in model.components().iter().enumerate() {
            p.mean_mut(i).assign(&c.mean);
            p.loadings_mut(i).assign(&c.loadings);
            p.log_noise_mut(i).assign(&c.noise_var.mapv(f64::ln));
        }
        p.logits_mut().assign(model.log_pi());
        p
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[self.layout.mean_range(i)])
    }

    pub fn mean_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        let r = self.layout.mean_range(i);
        ArrayViewMut1::from(&mut self.data[r])
    }

    pub fn loadings(&self, i: usize) -> ArrayView2<'_, f64> {
        let (d, l) = (self.layout.d, self.layout.l);
        ArrayView2::from_shape((d, l), &self.data[self.layout.loadings_range(i)]).expect("layout")
    }

    pub fn loadings_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let (d, l) = (self.layout.d, self.layout.l);
        let r = self.layout.loadings_range(i);
        ArrayViewMut2::from_shape((d, l), &mut self.data[r]).expect("layout")
    }

    pub fn log_noise(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[self.layout.log_noise_range(i)])
    }

    pub fn log_noise_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        let r = self.layout.log_noise_range(i);
        ArrayViewMut1::from(&mut self.data[r])
    }

    pub fn logits(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[self.layout.logits_range()])
    }

    pub fn logits_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        let r = self.layout.logits_range();
        ArrayViewMut1::from(&mut self.data[r])
    }

    /// Keeps every log-variance inside `[-LOG_NOISE_CLAMP, LOG_NOISE_CLAMP]`.
    pub fn clamp_log_noise(&mut self) {
        for i in 0..self.layout.k {
            self.log_noise_mut(i)
                .mapv_inplace(|s| s.clamp(-LOG_NOISE_CLAMP, LOG_NOISE_CLAMP));
        }
    }

    fn log_pi(&self) -> Array1<f64> {
        let logits = self.logits().to_owned();
        let lse = logsumexp(logits.as_slice().expect("contiguous"));
        logits.mapv(|a| a - lse)
    }

    pub(crate) fn components(&self) -> Vec<FaComponent> {
        (0..self.layout.k)
            .map(|i| FaComponent {
                mean: self.mean(i).to_owned(),
                loadings: self.loadings(i).to_owned(),
                noise_var: self
                    .log_noise(i)
                    .mapv(|s| s.clamp(-LOG_NOISE_CLAMP, LOG_NOISE_CLAMP).exp()),
            })
            .collect()
    }

    pub fn to_model(&self) -> Result<MfaModel> {
        let comps = self
            .components()
            .into_iter()
            .map(|c| FaComponent::new(c.mean, c.loadings, c.noise_var))
            .collect::<Result<Vec<_>>>()?;
        MfaModel::new(comps, self.log_pi())
    }
}

/// Mean NLL per row of `batch` and its gradient with respect to every entry of `params`.
pub fn nll_and_grad(params: &FlatParams, batch: ArrayView2<f64>) -> Result<(f64, FlatParams)> {
    let layout = params.layout();
    ensure_dim("batch columns", layout.d, batch.ncols())?;
    let b = batch.nrows();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let comps = params.components();
    let kernels = comps
        .iter()
        .enumerate()
        .map(|(i, c)| c.kernel(i))
        .collect::<Result<Vec<_>>>()?;
    let log_pi = params.log_pi();

    let mut resp = kernels_log_prob(&kernels, batch);
    resp += &log_pi;
    let mut total = 0.0;
    for mut row in resp.rows_mut() {
        let lse = logsumexp(row.as_slice().expect("contiguous"));
        total += lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    let nll = -total / b as f64;

    let mut grad = FlatParams::zeros(layout);
    let scale = -1.0 / b as f64;
    let parts: Vec<ComponentGrad> = kernels
        .par_iter()
        .enumerate()
        .map(|(i, k)| {
            // Responsibilities below 1e-16 are under the rounding of their row's unit
            // total and are skipped.
            let rows: Vec<usize> = (0..b).filter(|&n| resp[[n, i]] > 1e-16).collect();
            let weights = Array1::from_iter(rows.iter().map(|&n| resp[[n, i]] * scale));
            component_grad(k, batch.select(Axis(0), &rows).view(), weights.view())
        })
        .collect();
    for (i, part) in parts.into_iter().enumerate() {
        grad.mean_mut(i).assign(&part.mean);
        grad.loadings_mut(i).assign(&part.loadings);
        grad.log_noise_mut(i).assign(&part.log_noise);
    }
    let pi = log_pi.mapv(f64::exp);
    let resp_sum = resp.sum_axis(Axis(0));
    grad.logits_mut()
        .assign(&(&resp_sum * scale + &pi));
    Ok((nll, grad))
}

struct ComponentGrad {
    mean: Array1<f64>,
    loadings: Array2<f64>,
    log_noise: Array1<f64>,
}

/// `sum_n w_n d log p(x_n) / d theta` for one component.
fn component_grad(kernel: &ComponentKernel<'_>, x: ArrayView2<f64>, w: ArrayView1<f64>) -> ComponentGrad {
    let comp = kernel.component();
    let inv_noise = kernel.inv_noise();
    let scaled = kernel.scaled_loadings();
    let inv_l = kernel.inv_l();

    let centered = &x - &comp.mean;
    let solved = centered.dot(scaled).dot(inv_l);
    // beta = D^-1 x_hat - (D^-1 A) L^-1 (A^T D^-1 x_hat)
    let mut beta = centered;
    Zip::from(beta.rows_mut()).for_each(|mut row| row *= inv_noise);
    beta -= &solved.dot(&scaled.t());

    let w_sum = w.sum();
    let mean = beta.t().dot(&w);

    // Sigma^-1 A = D^-1 A L^-1
    let prec_loadings = scaled.dot(inv_l);
    let mut weighted_proj = beta.dot(&comp.loadings);
    Zip::from(weighted_proj.rows_mut())
        .and(&w)
        .for_each(|mut row, &wn| row *= wn);
    let mut loadings = beta.t().dot(&weighted_proj);
    loadings.scaled_add(-w_sum, &prec_loadings);

    let mut beta_sq = Array1::<f64>::zeros(comp.dim());
    for (row, &wn) in beta.rows().into_iter().zip(w.iter()) {
        Zip::from(&mut beta_sq).and(&row).for_each(|acc, &v| *acc += wn * v * v);
    }
    let log_noise = Zip::from(&beta_sq)
        .and(inv_noise)
        .and(&comp.noise_var)
        .and(prec_loadings.rows())
        .and(scaled.rows())
        .map_collect(|&bsq, &inv, &var, pl, sl| {
            let diag_prec = inv - pl.dot(&sl);
            0.5 * var * (bsq - w_sum * diag_prec)
        });

    ComponentGrad {
        mean,
        loadings,
        log_noise,
    }
}
