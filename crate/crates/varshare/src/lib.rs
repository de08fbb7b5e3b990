//! Estimation of the proportion of explained variance (the population R^2)
//! in high-dimensional Gaussian linear regression.
//!
//! The crate provides:
//!
//! * a dense quadratic-form estimator that is consistent whenever `p / n^2 -> 0`
//!   without any sparsity assumption ([`dense`]);
//! * a square-root-Lasso (equivalently scaled-Lasso) residual-variance
//!   estimator that attains the parametric rate under sparsity ([`sqrt_lasso`]);
//! * a sparsity-adaptive combination of the two ([`adaptive`]);
//! * a constrained-l1 precision-matrix estimator used to plug an estimated
//!   covariance inverse into the dense statistic ([`clime`]);
//! * known-noise-level estimators ([`known_sigma`]);
//! * honest confidence intervals with Monte-Carlo-calibrated constants
//!   ([`confidence`]);
//! * a deterministic Monte Carlo benchmark harness ([`bench`]) plus dataset
//!   simulation ([`simulate`]) and file formats ([`io`]).

pub mod adaptive;
pub mod bench;
pub mod clime;
pub mod confidence;
pub mod dense;
pub mod error;
pub mod io;
pub mod known_sigma;
pub mod lp;
pub mod model;
pub mod simulate;
pub mod sqrt_lasso;

pub use error::{Error, Result};
pub use model::{Dataset, EtaEstimate, GroundTruth, Method};

// Re-exported so downstream binaries can name matrix types without pinning
// their own copy of the linear-algebra crate.
pub use nalgebra;
