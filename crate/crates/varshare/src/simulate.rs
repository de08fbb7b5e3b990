//! Simulation of Gaussian regression datasets with controlled explained
//! variance.
//!
//! Covariate rows are drawn i.i.d. from `N(0, Sigma)` by multiplying standard
//! normal rows with the symmetric square root of `Sigma`; the noise is
//! `N(0, sigma^2)`. All randomness flows through a counter-based ChaCha8
//! stream seeded with a caller-visible 64-bit seed, so identical seeds give
//! bitwise-identical datasets and nearby replicate seeds are independent.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GroundTruth};

// ---------------------------------------------------------------------------
// Covariance families
// ---------------------------------------------------------------------------

/// Covariance families for the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum CovarianceSpec {
    /// `Sigma = I_p`.
    Identity { dim: usize },
    /// First-order autoregressive covariance `Sigma[i,j] = rho^|i-j|`.
    Ar1 { dim: usize, rho: f64 },
    /// Banded *precision* matrix: `Omega` has unit diagonal and value
    /// `offdiag` on bands `1..=bandwidth`; the covariance is its inverse.
    BandedPrecision {
        dim: usize,
        bandwidth: usize,
        offdiag: f64,
    },
    /// Explicit covariance matrix (validated on realization).
    #[serde(skip)]
    Explicit(DMatrix<f64>),
}

impl CovarianceSpec {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::Identity { dim }
            | CovarianceSpec::Ar1 { dim, .. }
            | CovarianceSpec::BandedPrecision { dim, .. } => *dim,
            CovarianceSpec::Explicit(m) => m.nrows(),
        }
    }

    /// Materializes the covariance matrix `Sigma`.
    pub fn realize(&self) -> Result<DMatrix<f64>> {
        match self {
            CovarianceSpec::Identity { dim } => {
                check_dim(*dim)?;
                Ok(DMatrix::identity(*dim, *dim))
            }
            CovarianceSpec::Ar1 { dim, rho } => {
                check_dim(*dim)?;
                if !(rho.is_finite() && rho.abs() < 1.0) {
                    return Err(Error::parameter(format!(
                        "AR(1) parameter must satisfy |rho| < 1, got {rho}"
                    )));
                }
                Ok(DMatrix::from_fn(*dim, *dim, |i, j| {
                    rho.powi((i as i32 - j as i32).abs())
                }))
            }
            CovarianceSpec::BandedPrecision { .. } => {
                let omega = self
                    .true_precision()?
                    .expect("banded family always has an explicit precision");
                let chol = omega.clone().cholesky().ok_or_else(|| {
                    Error::parameter(
                        "banded precision is not positive definite; shrink |offdiag|".to_string(),
                    )
                })?;
                Ok(chol.inverse())
            }
            CovarianceSpec::Explicit(m) => {
                if m.nrows() == 0 || m.nrows() != m.ncols() {
                    return Err(Error::parameter(format!(
                        "explicit covariance must be square and non-empty, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m.clone())
            }
        }
    }

    /// The exact precision matrix `Sigma^{-1}` when the family admits a
    /// closed form (all built-in families do; explicit matrices do not).
    pub fn true_precision(&self) -> Result<Option<DMatrix<f64>>> {
        match self {
            CovarianceSpec::Identity { dim } => {
                check_dim(*dim)?;
                Ok(Some(DMatrix::identity(*dim, *dim)))
            }
            CovarianceSpec::Ar1 { dim, rho } => {
                check_dim(*dim)?;
                if !(rho.is_finite() && rho.abs() < 1.0) {
                    return Err(Error::parameter(format!(
                        "AR(1) parameter must satisfy |rho| < 1, got {rho}"
                    )));
                }
                // Tridiagonal inverse of the AR(1) covariance.
                let d = *dim;
                let r = *rho;
                let denom = 1.0 - r * r;
                let mut omega = DMatrix::zeros(d, d);
                for i in 0..d {
                    let interior = i > 0 && i + 1 < d;
                    omega[(i, i)] = if interior && d > 1 {
                        (1.0 + r * r) / denom
                    } else {
                        1.0 / denom
                    };
                    if d == 1 {
                        omega[(i, i)] = 1.0;
                    }
                    if i + 1 < d {
                        omega[(i, i + 1)] = -r / denom;
                        omega[(i + 1, i)] = -r / denom;
                    }
                }
                Ok(Some(omega))
            }
            CovarianceSpec::BandedPrecision {
                dim,
                bandwidth,
                offdiag,
            } => {
                check_dim(*dim)?;
                if !offdiag.is_finite() {
                    return Err(Error::parameter("offdiag must be finite".to_string()));
                }
                let d = *dim;
                let mut omega = DMatrix::identity(d, d);
                for i in 0..d {
                    for j in 0..d {
                        let gap = i.abs_diff(j);
                        if gap >= 1 && gap <= *bandwidth {
                            omega[(i, j)] = *offdiag;
                        }
                    }
                }
                if omega.clone().cholesky().is_none() {
                    return Err(Error::parameter(format!(
                        "banded precision (bandwidth {bandwidth}, offdiag {offdiag}) is not positive definite"
                    )));
                }
                Ok(Some(omega))
            }
            CovarianceSpec::Explicit(_) => Ok(None),
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::parameter("covariance dimension must be positive"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Coefficient calibration
// ---------------------------------------------------------------------------

/// Coefficient-vector families, calibrated to hit a target explained
/// variance exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BetaKind {
    /// Exactly `k` nonzero coefficients of equal magnitude on the first `k`
    /// coordinates, with seed-controlled random signs.
    SparseEqualMagnitude { k: usize, target_eta: f64 },
    /// A standard normal draw over all `p` coordinates, rescaled.
    DenseGaussian { target_eta: f64 },
    /// Explicit coefficients, used as given (no rescaling).
    Explicit { coefficients: Vec<f64> },
}

/// A coefficient family plus the seed driving its random choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub kind: BetaKind,
    pub seed: u64,
}

/// Converts a target explained variance into the signal-to-noise ratio
/// `theta = eta / (1 - eta)`.
pub fn theta_for_eta(eta: f64) -> Result<f64> {
    if !(eta.is_finite() && (0.0..1.0).contains(&eta)) {
        return Err(Error::parameter(format!(
            "target explained variance must lie in [0, 1), got {eta}"
        )));
    }
    Ok(eta / (1.0 - eta))
}

/// Builds generating parameters whose explained variance matches the target
/// exactly (up to floating-point scaling error below 1e-12).
pub fn calibrate_beta(spec: &BetaSpec, cov: &CovarianceSpec, sigma: f64) -> Result<GroundTruth> {
    let sigma_mat = cov.realize()?;
    let p = sigma_mat.nrows();
    let beta = match &spec.kind {
        BetaKind::SparseEqualMagnitude { k, target_eta } => {
            let theta = theta_for_eta(*target_eta)?;
            if *k == 0 || *k > p {
                return Err(Error::parameter(format!(
                    "sparsity k={k} must lie in 1..={p}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut pattern = DVector::zeros(p);
            for j in 0..*k {
                pattern[j] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
            scale_to_theta(pattern, &sigma_mat, sigma, theta)?
        }
        BetaKind::DenseGaussian { target_eta } => {
            let theta = theta_for_eta(*target_eta)?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let pattern = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            scale_to_theta(pattern, &sigma_mat, sigma, theta)?
        }
        BetaKind::Explicit { coefficients } => {
            if coefficients.len() != p {
                return Err(Error::parameter(format!(
                    "explicit coefficients have length {}, expected {p}",
                    coefficients.len()
                )));
            }
            DVector::from_vec(coefficients.clone())
        }
    };
    GroundTruth::new(beta, sigma, sigma_mat)
}

fn scale_to_theta(
    pattern: DVector<f64>,
    sigma_mat: &DMatrix<f64>,
    sigma: f64,
    theta: f64,
) -> Result<DVector<f64>> {
    if theta == 0.0 {
        return Ok(DVector::zeros(pattern.len()));
    }
    let quad = (sigma_mat * &pattern).dot(&pattern);
    if quad <= 0.0 {
        return Err(Error::estimation(
            "coefficient pattern has zero signal under the covariance".to_string(),
        ));
    }
    let scale = (theta * sigma * sigma / quad).sqrt();
    Ok(pattern * scale)
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Symmetric square root of a symmetric positive definite matrix via its
/// eigendecomposition.
pub fn matrix_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::parameter("matrix square root requires a square matrix"));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::parameter(
            "matrix square root requires strictly positive eigenvalues".to_string(),
        ));
    }
    let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= sqrt_vals[j];
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Pre-computed sampler for repeated draws from one set of generating
/// parameters (caches the covariance square root across replicates).
#[derive(Debug, Clone)]
pub struct DesignSampler {
    beta: DVector<f64>,
    sigma: f64,
    /// `None` marks the identity covariance fast path.
    sqrt_sigma: Option<DMatrix<f64>>,
    p: usize,
}

impl DesignSampler {
    pub fn new(gt: &GroundTruth) -> Result<Self> {
        let p = gt.p();
        let is_identity = gt.sigma_mat() == &DMatrix::identity(p, p);
        let sqrt_sigma = if is_identity {
            None
        } else {
            Some(matrix_sqrt_spd(gt.sigma_mat())?)
        };
        Ok(DesignSampler {
            beta: gt.beta().clone(),
            sigma: gt.sigma(),
            sqrt_sigma,
            p,
        })
    }

    /// Draws a dataset of `n` observations; identical `(n, seed)` give
    /// bitwise-identical output.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::parameter("sample size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Standard normal design drawn row by row, then correlated.
        let mut z = DMatrix::zeros(n, self.p);
        for i in 0..n {
            for j in 0..self.p {
                z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let x = match &self.sqrt_sigma {
            None => z,
            // Rows x_i = S z_i with S symmetric, i.e. X = Z S.
            Some(s) => z * s,
        };
        let mut y = &x * &self.beta;
        for i in 0..n {
            y[i] += self.sigma * rng.sample::<f64, _>(StandardNormal);
        }
        Dataset::new(x, y)
    }
}

/// One-shot convenience wrapper around [`DesignSampler`].
pub fn sample_dataset(gt: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    DesignSampler::new(gt)?.sample(n, seed)
}
