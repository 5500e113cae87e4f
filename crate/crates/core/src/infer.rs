//! Closed-form inference with a trained mixture: in-painting from a partial
//! observation, likelihood-based outlier ranking and subspace projection.

use log::warn;
use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_dim, Error, Result};
use crate::math::argmax;
use crate::model::{FaComponent, MfaModel};

/// Which coordinates of a data vector are observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    observed: Vec<bool>,
}

impl ObservationMask {
    pub fn new(observed: Vec<bool>) -> Self {
        Self { observed }
    }

    /// One byte per coordinate: 0 hidden, anything else observed.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self::new(bytes.iter().map(|&b| b != 0).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.observed.iter().map(|&o| o as u8).collect()
    }

    /// Hides the `w x h` pixel rectangle with top-left corner `(x, y)` in an
    /// image of shape `(height, width, channels)`, all channels. The rectangle
    /// is clipped to the image.
    pub fn hide_rect(shape: (usize, usize, usize), x: usize, y: usize, w: usize, h: usize) -> Self {
        let (height, width, channels) = shape;
        let mut observed = vec![true; height * width * channels];
        for row in y..(y + h).min(height) {
            for col in x..(x + w).min(width) {
                for ch in 0..channels {
                    observed[(row * width + col) * channels + ch] = false;
                }
            }
        }
        Self { observed }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_observed(&self, j: usize) -> bool {
        self.observed[j]
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.observed[j]).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn n_hidden(&self) -> usize {
        self.len() - self.n_observed()
    }

    /// The observed coordinates of a full-length vector.
    pub fn gather(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.select(Axis(0), &self.observed_indices())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inpainting {
    pub x_full: Array1<f64>,
    pub component: usize,
    pub z: Array1<f64>,
}

/// The model restricted to the observed coordinates.
fn reduce(model: &MfaModel, idx: &[usize]) -> Vec<FaComponent> {
    model
        .components()
        .iter()
        .map(|c| FaComponent {
            mean: c.mean.select(Axis(0), idx),
            loadings: c.loadings.select(Axis(0), idx),
            noise_var: c.noise_var.select(Axis(0), idx),
        })
        .collect()
}

fn check_mask(x_observed: ArrayView1<f64>, mask: &ObservationMask, model: &MfaModel) -> Result<()> {
    ensure_dim("mask length", model.dim(), mask.len())?;
    ensure_dim("observed values", mask.n_observed(), x_observed.len())?;
    if mask.n_observed() == 0 {
        return Err(Error::InvalidArgument("mask hides every coordinate".into()));
    }
    if !x_observed.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("observed values".into()));
    }
    Ok(())
}

/// Selects the most responsible component on the observed scope and returns
/// it with its kernel-ready reduced form and the posterior over `z`.
fn reduced_posterior(
    x_observed: ArrayView1<f64>,
    mask: &ObservationMask,
    model: &MfaModel,
) -> Result<(usize, FaComponent, Array1<f64>)> {
    let idx = mask.observed_indices();
    let reduced = reduce(model, &idx);
    let mut scores = Vec::with_capacity(reduced.len());
    for (i, c) in reduced.iter().enumerate() {
        scores.push(model.log_pi()[i] + c.kernel(i)?.log_prob(x_observed)?);
    }
    let best = argmax(&scores);
    let comp = reduced.into_iter().nth(best).expect("index in range");
    let (z, _) = comp.kernel(best)?.posterior(x_observed)?;
    Ok((best, comp, z))
}

fn assemble(model: &MfaModel, component: usize, z: &Array1<f64>, x_observed: ArrayView1<f64>, mask: &ObservationMask) -> Array1<f64> {
    let comp = model.component(component);
    let mut full = comp.loadings.dot(z) + &comp.mean;
    for (j, &v) in mask.observed_indices().iter().zip(x_observed.iter()) {
        full[*j] = v;
    }
    full
}

/// Reconstructs the hidden coordinates as `A_c z + mu_c` where `c` is the most
/// responsible component given the observed part and `z` its posterior mean.
/// Observed coordinates are copied from the input unchanged.
pub fn inpaint(x_observed: ArrayView1<f64>, mask: &ObservationMask, model: &MfaModel) -> Result<Inpainting> {
    check_mask(x_observed, mask, model)?;
    if mask.n_hidden() == 0 {
        warn!("in-painting mask hides nothing; returning the input unchanged");
    }
    let (component, _, z) = reduced_posterior(x_observed, mask, model)?;
    Ok(Inpainting {
        x_full: assemble(model, component, &z, x_observed, mask),
        component,
        z,
    })
}

/// As [`inpaint`], with `z` drawn from the Gaussian posterior instead of its mean.
pub fn inpaint_sample(
    x_observed: ArrayView1<f64>,
    mask: &ObservationMask,
    model: &MfaModel,
    seed: u64,
) -> Result<Inpainting> {
    check_mask(x_observed, mask, model)?;
    if mask.n_hidden() == 0 {
        warn!("in-painting mask hides nothing; returning the input unchanged");
    }
    let (component, reduced, z_map) = reduced_posterior(x_observed, mask, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..z_map.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let z = reduced.kernel(component)?.posterior_draw(&z_map, &eps);
    Ok(Inpainting {
        x_full: assemble(model, component, &z, x_observed, mask),
        component,
        z,
    })
}

/// The `bottom` least likely rows as `(index, log-likelihood)`, ascending,
/// lower index first among equal likelihoods.
pub fn rank_outliers(x: ArrayView2<f64>, model: &MfaModel, bottom: usize) -> Result<Vec<(usize, f64)>> {
    if bottom > x.nrows() {
        return Err(Error::InvalidArgument(format!(
            "asked for {bottom} outliers from {} samples",
            x.nrows()
        )));
    }
    let (_, per_sample) = model.log_likelihood(x)?;
    let mut ranked: Vec<(usize, f64)> = per_sample.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.truncate(bottom);
    Ok(ranked)
}

/// `A_c z + mu_c` for the most responsible component `c` and posterior-mean `z`.
pub fn project_to_component(x: ArrayView1<f64>, model: &MfaModel) -> Result<(Array1<f64>, usize)> {
    let resp = model.responsibilities(x)?;
    let c = argmax(resp.as_slice().expect("contiguous"));
    let post = model.latent_posterior(x, c)?;
    Ok((model.component(c).decode(post.z_map.view())?, c))
}
