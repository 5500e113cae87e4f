//! Maximum-likelihood training of [`MfaModel`](crate::model::MfaModel)s by
//! mini-batch stochastic gradient descent with Adam, plus the initializers
//! that give SGD a sensible starting point.

mod adam;
mod grad;
mod hierarchical;
mod init;
mod pca;
mod sgd;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

pub use adam::Adam;
pub use grad::{nll_and_grad, FlatParams, ParamLayout};
pub use hierarchical::{allocate_subcomponents, hierarchical_train, HierarchicalConfig, HierarchicalResult};
pub use init::{
    fit_factor_analyzer, init_k_subspaces, init_kmeans_fa, init_random_subspace, initialize,
    subspace_residuals,
};
pub use pca::{top_eigen, EigenDecomposition};
pub use sgd::sgd_train;

use crate::error::{Error, Result};

/// Clamp range for the unconstrained log-variance parameters.
pub const LOG_NOISE_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// K-means followed by a factor analysis of every cluster.
    KMeansFa,
    /// `l + 1` random samples span each component's subspace.
    RandomSubspace,
    /// Random subspaces refined by nearest-subspace reassignment.
    KSubspaces,
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "kmeans_fa" => Ok(InitMethod::KMeansFa),
            "random" | "random_subspace" => Ok(InitMethod::RandomSubspace),
            "ksub" | "k_subspaces" => Ok(InitMethod::KSubspaces),
            other => Err(Error::InvalidArgument(format!("unknown init method {other:?}"))),
        }
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::KMeansFa => "kmeans",
            InitMethod::RandomSubspace => "random",
            InitMethod::KSubspaces => "ksub",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k_components: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub init_method: InitMethod,
    /// Lower bound on variances produced by the initializers.
    pub noise_floor: f64,
    pub rng_seed: u64,
    /// Steps between log records; 0 logs only the first and last step.
    pub eval_interval: usize,
}

impl TrainConfig {
    pub fn new(k_components: usize, latent_dim: usize) -> Self {
        Self {
            k_components,
            latent_dim,
            batch_size: 256,
            learning_rate: 1e-4,
            max_steps: 10_000,
            init_method: InitMethod::KMeansFa,
            noise_floor: 1e-6,
            rng_seed: 0,
            eval_interval: 1000,
        }
    }

    /// Checks the config against a data set of `n` rows and `d` columns.
    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if self.k_components == 0 {
            return Err(Error::InvalidArgument("k_components must be at least 1".into()));
        }
        if self.latent_dim == 0 || self.latent_dim >= d {
            return Err(Error::InvalidArgument(format!(
                "latent_dim must satisfy 1 <= l < d (l = {}, d = {d})",
                self.latent_dim
            )));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch_size must satisfy 1 <= batch_size <= N (batch_size = {}, N = {n})",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.noise_floor > 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::InvalidArgument("noise_floor must be positive".into()));
        }
        Ok(())
    }
}

/// One training progress record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub step: usize,
    /// Mean negative log-likelihood per sample over the training set.
    pub train_nll: f64,
    pub heldout_nll: Option<f64>,
    pub wallclock_s: f64,
}

impl TrainLog {
    /// Tab-separated `step, train_nll, heldout_nll, wallclock_s`; a missing
    /// held-out value is written as `nan`.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.10e}\t{:.10e}\t{:.6}",
            self.step,
            self.train_nll,
            self.heldout_nll.unwrap_or(f64::NAN),
            self.wallclock_s
        )
    }

    pub fn parse_tsv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split('\t').collect();
        let bad = || Error::Format(format!("bad training log line {line:?}"));
        if fields.len() != 4 {
            return Err(bad());
        }
        let heldout: f64 = fields[2].parse().map_err(|_| bad())?;
        Ok(Self {
            step: fields[0].parse().map_err(|_| bad())?,
            train_nll: fields[1].parse().map_err(|_| bad())?,
            heldout_nll: (!heldout.is_nan()).then_some(heldout),
            wallclock_s: fields[3].parse().map_err(|_| bad())?,
        })
    }
}

pub fn write_logs<W: Write>(mut w: W, logs: &[TrainLog]) -> std::io::Result<()> {
    for log in logs {
        writeln!(w, "{}", log.to_tsv())?;
    }
    Ok(())
}
