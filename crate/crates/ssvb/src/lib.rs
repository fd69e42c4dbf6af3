//! Spike-and-slab Bayesian variable selection by coordinate-ascent
//! variational inference.
//!
//! Four fitters share one report shape:
//!
//! * [`linear::fit_linear`] — Gaussian likelihood, mean-field factors over
//!   the coefficients, the noise variance and the inclusion indicators.
//! * [`collapsed::fit_collapsed`] — coefficients and noise integrated out
//!   analytically; coordinate sweeps over the indicators alone.
//! * [`quantile::fit_quantile`] — check-loss regression through the
//!   asymmetric-Laplace mixture representation with GIG latent scales.
//! * [`logistic::fit_logistic`] — binary responses through Pólya-Gamma
//!   latent scales.
//!
//! [`oracle`] enumerates the exact posterior over all `2^p` inclusion
//! vectors for desk-scale ground truth, and [`experiments`] provides seeded
//! data generation and Monte-Carlo trend studies against that truth.

// validation guards are written `!(x > 0.0)` so that NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collapsed;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod linear;
pub mod logistic;
pub mod math;
pub mod oracle;
pub mod quantile;

pub use error::{Error, Result};
pub use fit::{FitOptions, FitReport};
pub use math::{Dataset, ResponseKind, SpikeSlabHyper};
