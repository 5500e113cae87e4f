//! Number of statistically Different Bins (NDB).
//!
//! Reference samples are clustered with K-means; the Voronoi cells of the
//! centroids are the bins. A test set is assigned to the same bins and every
//! bin gets a two-sample test on Bernoulli proportions with the pooled
//! proportion `P` and `SE = sqrt(P (1 - P) (1/N_p + 1/N_q))`. NDB counts the
//! bins whose `|z|` exceeds the two-sided critical value. The Jensen-Shannon
//! divergence between the two bin histograms is reported alongside.

use std::fmt::Write as _;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_dim, Error, Result};
use crate::kmeans::{self, KMeansConfig};
use crate::model::check_finite;

pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;
/// Floor for per-dimension standard deviations used in semi-whitening.
pub const WHITEN_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BinningModel {
    /// `K_bins x d`, in the preprocessed (possibly whitened) space.
    pub centroids: Array2<f64>,
    pub ref_proportions: Array1<f64>,
    pub n_ref: usize,
    /// Per-dimension reference standard deviation when semi-whitening.
    pub whiten_scale: Option<Array1<f64>>,
    /// Dimensions used for the K-means distance computations.
    pub subsample_idx: Option<Vec<usize>>,
    pub significance: f64,
}

impl BinningModel {
    pub fn n_bins(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    fn preprocess(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match &self.whiten_scale {
            Some(s) => &x / s,
            None => x.to_owned(),
        }
    }

    /// Bin index of every row of raw (unwhitened) data.
    pub fn assign(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        ensure_dim("data columns", self.dim(), x.ncols())?;
        check_finite(x, "binned data")?;
        kmeans::assign(self.preprocess(x).view(), self.centroids.view())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinOptions {
    /// Divide every dimension by its reference standard deviation.
    pub whiten: bool,
    /// Cluster at most this many randomly chosen reference rows.
    pub cluster_subset: Option<usize>,
    /// Use this many randomly chosen dimensions inside K-means.
    pub dim_subset: Option<usize>,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    pub significance: f64,
}

impl Default for BinOptions {
    fn default() -> Self {
        Self {
            whiten: false,
            cluster_subset: None,
            dim_subset: None,
            seed: 0,
            n_init: 10,
            max_iter: 300,
            significance: DEFAULT_SIGNIFICANCE,
        }
    }
}

impl BinOptions {
    /// Settings used for 64x64x3 face images: 80,000 clustered rows, 2,000 dimensions, whitened.
    pub fn celeba_scale() -> Self {
        Self {
            whiten: true,
            cluster_subset: Some(80_000),
            dim_subset: Some(2_000),
            ..Self::default()
        }
    }
}

fn reference_std(x: ArrayView2<f64>) -> Array1<f64> {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut var = Array1::<f64>::zeros(x.ncols());
    for row in x.rows() {
        for ((v, &m), &r) in var.iter_mut().zip(mean.iter()).zip(row.iter()) {
            *v += (r - m) * (r - m);
        }
    }
    var.mapv(|v| (v / n).sqrt())
}

/// Fits `k_bins` Voronoi bins to the reference set.
pub fn fit_bins(x_ref: ArrayView2<f64>, k_bins: usize, opts: &BinOptions) -> Result<BinningModel> {
    let (n, d) = x_ref.dim();
    if k_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    if k_bins * 10 > n {
        return Err(Error::InvalidArgument(format!(
            "{k_bins} bins need at least {} reference samples (K_bins <= N/10), got {n}",
            k_bins * 10
        )));
    }
    if !(opts.significance > 0.0 && opts.significance < 1.0) {
        return Err(Error::InvalidArgument("significance must lie in (0, 1)".into()));
    }
    check_finite(x_ref, "reference data")?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let whiten_scale = if opts.whiten {
        let std = reference_std(x_ref);
        let floored = std.iter().filter(|&&s| s < WHITEN_STD_FLOOR).count();
        if floored > 0 {
            warn!("{floored} constant dimensions; their standard deviation is floored at {WHITEN_STD_FLOOR:e}");
        }
        Some(std.mapv(|s| s.max(WHITEN_STD_FLOOR)))
    } else {
        None
    };
    let data = match &whiten_scale {
        Some(s) => &x_ref / s,
        None => x_ref.to_owned(),
    };

    let rows: Vec<usize> = match opts.cluster_subset {
        Some(m) if m < n => {
            let mut r = index::sample(&mut rng, n, m).into_vec();
            r.sort_unstable();
            r
        }
        _ => (0..n).collect(),
    };
    if rows.len() < k_bins {
        return Err(Error::InvalidArgument(format!(
            "cluster subset of {} rows is smaller than {k_bins} bins",
            rows.len()
        )));
    }
    let subsample_idx = match opts.dim_subset {
        Some(m) if m < d => {
            let mut dims = index::sample(&mut rng, d, m.max(1)).into_vec();
            dims.sort_unstable();
            Some(dims)
        }
        _ => None,
    };
    let clustered = data.select(Axis(0), &rows);
    let km_input = match &subsample_idx {
        Some(dims) => clustered.select(Axis(1), dims),
        None => clustered.clone(),
    };
    let km = kmeans::fit(
        km_input.view(),
        &KMeansConfig {
            k: k_bins,
            n_init: opts.n_init,
            max_iter: opts.max_iter,
            seed: opts.seed,
        },
    )?;

    // Centroids in the full dimension: means of the clustered rows.
    let mut centroids = Array2::<f64>::zeros((k_bins, d));
    let mut counts = vec![0usize; k_bins];
    for (row, &c) in clustered.rows().into_iter().zip(&km.assignments) {
        centroids.row_mut(c).scaled_add(1.0, &row);
        counts[c] += 1;
    }
    for (mut c, &cnt) in centroids.rows_mut().into_iter().zip(&counts) {
        if cnt > 0 {
            c /= cnt as f64;
        }
    }

    let labels = kmeans::assign(data.view(), centroids.view())?;
    let ref_proportions = proportions(&labels, k_bins);
    Ok(BinningModel {
        centroids,
        ref_proportions,
        n_ref: n,
        whiten_scale,
        subsample_idx,
        significance: opts.significance,
    })
}

fn proportions(labels: &[usize], k: usize) -> Array1<f64> {
    let mut counts = Array1::<f64>::zeros(k);
    for &l in labels {
        counts[l] += 1.0;
    }
    let n = labels.len() as f64;
    counts / n
}

/// Critical `|z|` of a two-sided test at level `alpha`.
pub fn z_threshold(alpha: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha / 2.0)
}

/// Pooled two-proportion z statistic `(p1 - p2) / SE`; zero when `SE = 0`.
pub fn two_proportion_z(p1: f64, n1: usize, p2: f64, n2: usize) -> f64 {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (p1 * n1f + p2 * n2f) / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se > 0.0 {
        (p1 - p2) / se
    } else {
        0.0
    }
}

/// Jensen-Shannon divergence in nats, with `0 log 0 = 0`.
pub fn js_divergence(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    let kl_to_mid = |a: f64, b: f64| {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            a * (a / m).ln()
        } else {
            0.0
        }
    };
    let js: f64 = p
        .iter()
        .zip(q.iter())
        .map(|(&a, &b)| 0.5 * kl_to_mid(a, b) + 0.5 * kl_to_mid(b, a))
        .sum();
    js.clamp(0.0, std::f64::consts::LN_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    pub ref_prop: f64,
    pub test_prop: f64,
    pub z_score: f64,
    pub different: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdbReport {
    pub per_bin: Vec<BinStat>,
    pub ndb: usize,
    pub ndb_over_k: f64,
    pub js_divergence: f64,
    pub n_ref: usize,
    pub n_test: usize,
    pub z_threshold: f64,
}

impl NdbReport {
    pub fn k(&self) -> usize {
        self.per_bin.len()
    }

    /// `NDB: x/K (ndb/K = y), JS = z`
    pub fn summary_line(&self) -> String {
        format!(
            "NDB: {}/{} (ndb/K = {:.4}), JS = {:.6}",
            self.ndb,
            self.k(),
            self.ndb_over_k,
            self.js_divergence
        )
    }

    /// Aligned text: one line per bin, then the summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6} {:>10} {:>10} {:>10}  diff", "bin", "ref_prop", "test_prop", "z");
        for (i, b) in self.per_bin.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>6} {:>10.6} {:>10.6} {:>10.4}  {}",
                i,
                b.ref_prop,
                b.test_prop,
                b.z_score,
                if b.different { "*" } else { "" }
            );
        }
        let _ = writeln!(s, "{}", self.summary_line());
        s
    }

    /// Tab-separated rows. Per bin: `bin, index, ref_prop, test_prop, z, different(0/1)`;
    /// then `summary, ndb, K, ndb/K, js`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, b) in self.per_bin.iter().enumerate() {
            let _ = writeln!(
                s,
                "bin\t{i}\t{:e}\t{:e}\t{:e}\t{}",
                b.ref_prop, b.test_prop, b.z_score, b.different as u8
            );
        }
        let _ = writeln!(
            s,
            "summary\t{}\t{}\t{:e}\t{:e}",
            self.ndb,
            self.k(),
            self.ndb_over_k,
            self.js_divergence
        );
        s
    }

    /// Two numeric columns per bin: reference and test proportion.
    pub fn histogram_tsv(&self) -> String {
        let mut s = String::new();
        for b in &self.per_bin {
            let _ = writeln!(s, "{:e}\t{:e}", b.ref_prop, b.test_prop);
        }
        s
    }
}

/// Compares the bin proportions of `x_test` (raw space) with the reference.
pub fn evaluate(x_test: ArrayView2<f64>, bins: &BinningModel) -> Result<NdbReport> {
    if x_test.nrows() == 0 {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let labels = bins.assign(x_test)?;
    let test_props = proportions(&labels, bins.n_bins());
    let threshold = z_threshold(bins.significance);
    let n_test = x_test.nrows();
    let per_bin: Vec<BinStat> = bins
        .ref_proportions
        .iter()
        .zip(test_props.iter())
        .map(|(&p, &q)| {
            let z = two_proportion_z(p, bins.n_ref, q, n_test);
            BinStat {
                ref_prop: p,
                test_prop: q,
                z_score: z,
                different: z.abs() > threshold,
            }
        })
        .collect();
    let ndb = per_bin.iter().filter(|b| b.different).count();
    Ok(NdbReport {
        ndb,
        ndb_over_k: ndb as f64 / per_bin.len() as f64,
        js_divergence: js_divergence(bins.ref_proportions.view(), test_props.view()),
        per_bin,
        n_ref: bins.n_ref,
        n_test,
        z_threshold: threshold,
    })
}

/// Mean NDB/K over `trials` pairs of independent draws from one sampler:
/// bins are fitted on the first draw and the second is evaluated.
pub fn calibration_ndb<F>(
    mut sampler: F,
    n_each: usize,
    k_bins: usize,
    trials: usize,
    seed: u64,
    opts: &BinOptions,
) -> Result<f64>
where
    F: FnMut(usize, &mut dyn RngCore) -> Array2<f64>,
{
    if trials == 0 {
        return Err(Error::InvalidArgument("calibration needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for t in 0..trials {
        let reference = sampler(n_each, &mut rng);
        let test = sampler(n_each, &mut rng);
        let trial_opts = BinOptions {
            seed: opts.seed.wrapping_add(t as u64),
            ..opts.clone()
        };
        let bins = fit_bins(reference.view(), k_bins, &trial_opts)?;
        total += evaluate(test.view(), &bins)?.ndb_over_k;
    }
    Ok(total / trials as f64)
}

/// Up to `count` rows assigned to `bin_index`, nearest to its centroid first
/// (ties by row index).
pub fn bin_exemplars(x: ArrayView2<f64>, bins: &BinningModel, bin_index: usize, count: usize) -> Result<Vec<usize>> {
    if bin_index >= bins.n_bins() {
        return Err(Error::InvalidArgument(format!(
            "bin {bin_index} out of range for {} bins",
            bins.n_bins()
        )));
    }
    let labels = bins.assign(x)?;
    let pre = bins.preprocess(x);
    let centroid = bins.centroids.row(bin_index);
    let mut members: Vec<(usize, f64)> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == bin_index)
        .map(|(i, _)| {
            let diff = &pre.row(i) - &centroid;
            (i, diff.dot(&diff))
        })
        .collect();
    members.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(members.into_iter().take(count).map(|(i, _)| i).collect())
}
