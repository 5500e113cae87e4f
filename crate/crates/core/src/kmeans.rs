//! Lloyd's K-means with k-means++ seeding, shared by binning and MFA initialization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};
use crate::model::check_finite;

const ASSIGN_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k x d`.
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Lloyd iterations used by the winning run.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            n_init: 10,
            max_iter: 300,
            seed,
        }
    }
}

/// Runs `n_init` seeded restarts and keeps the one with the lowest inertia.
pub fn fit(x: ArrayView2<f64>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = x.nrows();
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if cfg.k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {} exceeds the number of samples {n}",
            cfg.k
        )));
    }
    check_finite(x, "k-means input")?;
    let norms = row_norms(x);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.n_init.max(1) {
        let run_seed: u64 = rng.gen();
        let result = lloyd(x, &norms, cfg.k, cfg.max_iter, run_seed);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Nearest centroid by squared L2 distance, lowest index on ties.
pub fn assign(x: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Result<Vec<usize>> {
    ensure_dim("centroid columns", x.ncols(), centroids.ncols())?;
    if centroids.nrows() == 0 {
        return Err(Error::InvalidArgument("no centroids".into()));
    }
    let norms = row_norms(x);
    Ok(assign_with_norms(x, &norms, centroids).0)
}

pub(crate) fn row_norms(x: ArrayView2<f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r))
}

/// Returns assignments and the squared distance of each row to its centroid.
fn assign_with_norms(
    x: ArrayView2<f64>,
    norms: &Array1<f64>,
    centroids: ArrayView2<f64>,
) -> (Vec<usize>, Vec<f64>) {
    let c_norms = row_norms(centroids);
    let blocks: Vec<(Vec<usize>, Vec<f64>)> = x
        .axis_chunks_iter(Axis(0), ASSIGN_BLOCK)
        .into_par_iter()
        .enumerate()
        .map(|(b, block)| {
            let start = b * ASSIGN_BLOCK;
            // ||x||^2 - 2 x.c + ||c||^2
            let cross = block.dot(&centroids.t());
            let mut labels = Vec::with_capacity(block.nrows());
            let mut dists = Vec::with_capacity(block.nrows());
            for (r, row) in cross.rows().into_iter().enumerate() {
                let xn = norms[start + r];
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, (&xc, &cn)) in row.iter().zip(c_norms.iter()).enumerate() {
                    let d = xn - 2.0 * xc + cn;
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                labels.push(best);
                dists.push(best_d.max(0.0));
            }
            (labels, dists)
        })
        .collect();
    let mut labels = Vec::with_capacity(x.nrows());
    let mut dists = Vec::with_capacity(x.nrows());
    for (l, d) in blocks {
        labels.extend(l);
        dists.extend(d);
    }
    (labels, dists)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    Zip::from(&a).and(&b).fold(0.0, |acc, &u, &v| acc + (u - v) * (u - v))
}

fn plus_plus_seed(x: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut closest: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let next = match WeightedIndex::new(&closest) {
            Ok(w) => w.sample(rng),
            // Every point already coincides with a centroid.
            Err(_) => rng.gen_range(0..n),
        };
        centroids.row_mut(c).assign(&x.row(next));
        for (d, r) in closest.iter_mut().zip(x.rows()) {
            *d = d.min(sq_dist(r, x.row(next)));
        }
    }
    centroids
}

fn lloyd(x: ArrayView2<f64>, norms: &Array1<f64>, k: usize, max_iter: usize, seed: u64) -> KMeansResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(x, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut iterations = 0;
    for it in 0..max_iter.max(1) {
        iterations = it + 1;
        let (new_labels, dists) = assign_with_norms(x, norms, centroids.view());
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        update_centroids(x, &mut labels, &dists, &mut centroids);
    }
    let inertia = labels
        .iter()
        .zip(x.rows())
        .map(|(&c, r)| sq_dist(r, centroids.row(c)))
        .sum();
    KMeansResult {
        centroids,
        assignments: labels,
        inertia,
        iterations,
    }
}

/// Means of assigned points; empty clusters take the point farthest from its centroid.
fn update_centroids(x: ArrayView2<f64>, labels: &mut [usize], dists: &[f64], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let mut counts = vec![0usize; k];
    for (r, &c) in x.rows().into_iter().zip(labels.iter()) {
        sums.row_mut(c).scaled_add(1.0, &r);
        counts[c] += 1;
    }
    let mut taken = vec![false; x.nrows()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = (0..x.nrows())
            .filter(|&i| !taken[i] && counts[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        if let Some(i) = far {
            taken[i] = true;
            let old = labels[i];
            sums.row_mut(old).scaled_add(-1.0, &x.row(i));
            counts[old] -= 1;
            sums.row_mut(c).assign(&x.row(i));
            counts[c] = 1;
            labels[i] = c;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let mean = &sums.row(c) / counts[c] as f64;
            centroids.row_mut(c).assign(&mean);
        }
    }
}
