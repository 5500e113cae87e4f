//! Starting points for SGD.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pca::{column_means, top_eigen};
use super::{InitMethod, TrainConfig};
use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansConfig};
use crate::model::{check_finite, FaComponent, MfaModel};

const KSUB_ITERS: usize = 10;

pub fn initialize(x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<MfaModel> {
    match cfg.init_method {
        InitMethod::KMeansFa => init_kmeans_fa(x, cfg),
        InitMethod::RandomSubspace => init_random_subspace(x, cfg),
        InitMethod::KSubspaces => init_k_subspaces(x, cfg),
    }
}

/// Probabilistic-PCA style factor analysis of one group of points.
///
/// `A` holds the top `l` principal directions scaled by
/// `sqrt(max(lambda_k - sigma^2, floor))` where `sigma^2` is the mean of the
/// discarded eigenvalues; `D_j` is the variance left over in dimension `j`,
/// never below `floor`.
pub fn fit_factor_analyzer(points: ArrayView2<f64>, l: usize, floor: f64) -> Result<FaComponent> {
    let (n, d) = points.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("factor analysis of an empty group".into()));
    }
    if l >= d {
        return Err(Error::InvalidArgument(format!("latent dimension {l} must be below {d}")));
    }
    let mean = column_means(points);
    let centered = &points - &mean;
    let var = centered.map_axis(Axis(0), |c| c.dot(&c) / n as f64);
    let eig = top_eigen(centered.view(), l);
    let residual = ((eig.trace - eig.values.sum()) / (d - l) as f64).max(0.0);
    let mut loadings = eig.vectors;
    for (mut col, &lam) in loadings.columns_mut().into_iter().zip(eig.values.iter()) {
        col *= (lam - residual).max(floor).sqrt();
    }
    let explained = loadings.map_axis(Axis(1), |r| r.dot(&r));
    let noise = (&var - &explained).mapv(|v| v.max(floor));
    FaComponent::new(mean, loadings, noise)
}

/// K-means, then [`fit_factor_analyzer`] per cluster; `pi` from cluster sizes.
pub fn init_kmeans_fa(x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<MfaModel> {
    check_shape(x, cfg)?;
    let n = x.nrows();
    let needed = cfg.k_components * (cfg.latent_dim + 1);
    if n < needed {
        return Err(Error::InvalidArgument(format!(
            "k-means initialization needs N >= K (l + 1) = {needed}, got N = {n}"
        )));
    }
    let km = kmeans::fit(
        x,
        &KMeansConfig {
            k: cfg.k_components,
            n_init: 3,
            max_iter: 100,
            seed: cfg.rng_seed,
        },
    )?;
    model_from_groups(x, &km.assignments, cfg.k_components, cfg.latent_dim, cfg.noise_floor)
}

/// Each component spans `l + 1` randomly drawn samples; noise is one tenth of
/// the average per-dimension data variance; uniform mixing weights.
pub fn init_random_subspace(x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<MfaModel> {
    check_shape(x, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let seeds = random_seed_sets(x.nrows(), cfg.k_components, cfg.latent_dim + 1, &mut rng);
    let noise = default_noise(x, cfg.noise_floor);
    let comps = seeds
        .iter()
        .map(|idx| {
            let (mean, loadings) = span_of(x, idx, cfg.latent_dim, false);
            FaComponent::new(mean, loadings, Array1::from_elem(x.ncols(), noise))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = comps.len();
    MfaModel::from_log_weights(comps, Array1::zeros(k))
}

/// Random subspaces refined by assigning every sample to the subspace with the
/// smallest orthogonal residual and re-fitting each subspace by PCA.
pub fn init_k_subspaces(x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<MfaModel> {
    check_shape(x, cfg)?;
    let (n, l, k) = (x.nrows(), cfg.latent_dim, cfg.k_components);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let seeds = random_seed_sets(n, k, l + 1, &mut rng);
    let mut subspaces: Vec<(Array1<f64>, Array2<f64>)> =
        seeds.iter().map(|idx| span_of(x, idx, l, true)).collect();

    let mut labels: Vec<usize> = Vec::new();
    for _ in 0..KSUB_ITERS {
        let residuals = subspace_residuals(x, &subspaces);
        let new_labels: Vec<usize> = residuals.rows().into_iter().map(argmin).collect();
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in labels.iter().enumerate() {
            members[c].push(i);
        }
        // Worst-represented samples first, for re-seeding empty subspaces.
        let mut worst: Vec<usize> = (0..n).collect();
        worst.sort_by(|&a, &b| {
            residuals[[b, labels[b]]]
                .total_cmp(&residuals[[a, labels[a]]])
                .then(a.cmp(&b))
        });
        let mut worst = worst.into_iter();
        for (c, idx) in members.iter().enumerate() {
            if idx.is_empty() {
                warn!("k-subspaces: component {c} is empty, re-seeding from poorly represented samples");
                let reseed: Vec<usize> = worst.by_ref().take(l + 1).collect();
                if !reseed.is_empty() {
                    subspaces[c] = span_of(x, &reseed, l, true);
                }
            } else {
                let pts = x.select(Axis(0), idx);
                let mean = column_means(pts.view());
                let basis = top_eigen((&pts - &mean).view(), l).vectors;
                subspaces[c] = (mean, basis);
            }
        }
    }
    model_from_groups(x, &labels, k, l, cfg.noise_floor)
}

/// `||x - mu||^2 - ||U^T (x - mu)||^2` for every sample and subspace (`U` orthonormal).
pub fn subspace_residuals(x: ArrayView2<f64>, subspaces: &[(Array1<f64>, Array2<f64>)]) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), subspaces.len()));
    for (c, (mean, basis)) in subspaces.iter().enumerate() {
        let centered = &x - mean;
        let proj = centered.dot(basis);
        for (i, (row, p)) in centered.rows().into_iter().zip(proj.rows()).enumerate() {
            out[[i, c]] = (row.dot(&row) - p.dot(&p)).max(0.0);
        }
    }
    out
}

fn argmin(r: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in r.iter().enumerate() {
        if v < r[best] {
            best = i;
        }
    }
    best
}

fn check_shape(x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<()> {
    let (n, d) = x.dim();
    if cfg.k_components == 0 {
        return Err(Error::InvalidArgument("k_components must be at least 1".into()));
    }
    if cfg.latent_dim == 0 || cfg.latent_dim >= d {
        return Err(Error::InvalidArgument(format!(
            "latent_dim must satisfy 1 <= l < d (l = {}, d = {d})",
            cfg.latent_dim
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    check_finite(x, "training data")
}

fn default_noise(x: ArrayView2<f64>, floor: f64) -> f64 {
    let n = x.nrows() as f64;
    let mean = column_means(x);
    let total: f64 = x
        .rows()
        .into_iter()
        .map(|r| (&r - &mean).mapv(|v| v * v).sum())
        .sum();
    (0.1 * total / (n * x.ncols() as f64)).max(floor)
}

/// `k` sets of `size` row indices, distinct across all sets when `N` allows.
fn random_seed_sets(n: usize, k: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if n >= k * size {
        let flat = index::sample(rng, n, k * size).into_vec();
        flat.chunks(size).map(|c| c.to_vec()).collect()
    } else {
        warn!("only {n} samples for {k} components of {size} seeds each; drawing with replacement");
        (0..k)
            .map(|_| (0..size).map(|_| rng.gen_range(0..n)).collect())
            .collect()
    }
}

/// Mean of the rows and a Gram-Schmidt basis of their differences from it.
/// With `normalize` the basis is orthonormal, otherwise each column keeps the
/// length of its orthogonalized difference. Degenerate directions are zero.
fn span_of(x: ArrayView2<f64>, idx: &[usize], l: usize, normalize: bool) -> (Array1<f64>, Array2<f64>) {
    let pts = x.select(Axis(0), idx);
    let mean = column_means(pts.view());
    let d = x.ncols();
    let mut basis = Array2::<f64>::zeros((d, l));
    let mut unit: Vec<Array1<f64>> = Vec::new();
    let scale = pts.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for row in pts.rows() {
        if unit.len() == l {
            break;
        }
        let mut v = &row - &mean;
        for u in &unit {
            let proj = u.dot(&v);
            v.scaled_add(-proj, u);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-10 * scale {
            let u = &v / norm;
            basis
                .column_mut(unit.len())
                .assign(if normalize { &u } else { &v });
            unit.push(u);
        }
    }
    (mean, basis)
}

/// Fits one factor analyzer per label group. Groups with fewer than `l + 1`
/// members are merged into the group with the nearest mean first.
fn model_from_groups(x: ArrayView2<f64>, labels: &[usize], k: usize, l: usize, floor: f64) -> Result<MfaModel> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        groups[c].push(i);
    }
    groups.retain(|g| !g.is_empty());
    loop {
        if groups.len() <= 1 {
            break;
        }
        let Some(small) = (0..groups.len())
            .filter(|&g| groups[g].len() < l + 1)
            .min_by_key(|&g| (groups[g].len(), g))
        else {
            break;
        };
        let means: Vec<Array1<f64>> = groups
            .iter()
            .map(|g| column_means(x.select(Axis(0), g).view()))
            .collect();
        let target = (0..groups.len())
            .filter(|&g| g != small)
            .min_by(|&a, &b| {
                let da = (&means[a] - &means[small]).mapv(|v| v * v).sum();
                let db = (&means[b] - &means[small]).mapv(|v| v * v).sum();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("at least two groups");
        warn!(
            "cluster with {} members is below l + 1 = {}; merging it into a neighbour",
            groups[small].len(),
            l + 1
        );
        let moved = std::mem::take(&mut groups[small]);
        groups[target].extend(moved);
        groups.remove(small);
    }
    let n = labels.len() as f64;
    let mut comps = Vec::with_capacity(groups.len());
    let mut log_w = Vec::with_capacity(groups.len());
    for g in &groups {
        comps.push(fit_factor_analyzer(x.select(Axis(0), g).view(), l, floor)?);
        log_w.push((g.len() as f64 / n).ln());
    }
    MfaModel::from_log_weights(comps, Array1::from(log_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_data_hits_the_floor() {
        let x = Array2::from_elem((20, 5), 0.25);
        let c = fit_factor_analyzer(x.view(), 2, 1e-6).unwrap();
        assert!(c.noise_var.iter().all(|&v| v == 1e-6));
        assert!(c.loadings.iter().all(|v| v.abs() <= 1e-3 + 1e-12));
        assert!(c.mean.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn identical_seed_rows_give_zero_loadings() {
        let x = Array2::from_elem((4, 3), 1.0);
        let (mean, basis) = span_of(x.view(), &[0, 1, 2], 2, false);
        assert_eq!(mean, array![1.0, 1.0, 1.0]);
        assert!(basis.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factor_analysis_recovers_planted_loading() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand_distr::{Distribution, StandardNormal};
        let n = 20_000;
        let a = array![3.0, 0.0, 4.0, 0.0];
        let x = Array2::from_shape_fn((n, 4), |_| 0.0);
        let mut x = x;
        for mut row in x.rows_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            for j in 0..4 {
                let e: f64 = StandardNormal.sample(&mut rng);
                row[j] = a[j] * z + 0.1 * e;
            }
        }
        let c = fit_factor_analyzer(x.view(), 1, 1e-6).unwrap();
        let col = c.loadings.column(0);
        let cos = col.dot(&a) / (col.dot(&col).sqrt() * 5.0);
        assert!(cos > 0.999, "cos {cos}");
        assert!((col.dot(&col).sqrt() - 5.0).abs() < 0.15);
        assert!(c.noise_var.iter().all(|&v| (v - 0.01).abs() < 0.005), "{}", c.noise_var);
    }
}
