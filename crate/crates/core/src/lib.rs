//! Mixture of Factor Analyzers (MFA) generative models for high-dimensional
//! data, and the NDB bin-proportion test for evaluating generative models.
//!
//! * [`model`]: the mixture and its likelihood kernels, linear in the data dimension.
//! * [`train`]: initialization and Adam-based maximum-likelihood training.
//! * [`infer`]: in-painting, outlier ranking and subspace projection.
//! * [`ndb`]: Voronoi binning and the number of statistically different bins.
//! * [`sharpness`]: relative high-frequency energy of image sets.
//! * [`io`]: dataset loaders and model/binning containers.

pub mod error;
pub mod infer;
pub mod io;
pub mod kmeans;
pub mod math;
pub mod model;
pub mod ndb;
pub mod sharpness;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use model::{FaComponent, LatentPosterior, MfaModel};
