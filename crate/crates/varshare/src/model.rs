//! Core data model: regression datasets, generating parameters, and the
//! estimand eta = theta / (1 + theta), the proportion of explained variance.
//!
//! The observation model is `y = X beta + eps` with `eps ~ N(0, sigma^2 I_n)`
//! and rows of `X` drawn i.i.d. from `N(0, Sigma)`. The signal-to-noise ratio
//! is `theta = beta' Sigma beta / sigma^2`; the proportion of explained
//! variance is `eta = theta / (1 + theta)`, which always lies in `[0, 1)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed design/response pair: `x` is `n x p`, `y` has length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Builds a dataset, validating shapes and finiteness.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::data(format!(
                "design matrix must be non-empty, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::data(format!(
                "response length {} does not match {} design rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("design matrix contains non-finite entries"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("response contains non-finite entries"));
        }
        Ok(Dataset { x, y })
    }

    /// Number of observations `n`.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of covariates `p`.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Squared Euclidean norm of the response.
    pub fn y_norm_sq(&self) -> f64 {
        self.y.norm_squared()
    }

    /// Returns the dataset restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::data("row selection must be non-empty"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::data(format!(
                "row index {} out of range for n={}",
                bad,
                self.n()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        Dataset::new(x, y)
    }
}

/// Generating parameters of the model: coefficient vector, noise level, and
/// covariance of the covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    beta: DVector<f64>,
    sigma: f64,
    sigma_mat: DMatrix<f64>,
    sparsity: usize,
}

/// Tolerance used to decide whether a covariance matrix is symmetric.
const SYMMETRY_TOL: f64 = 1e-8;

impl GroundTruth {
    /// Builds a parameter set, validating `sigma > 0`, symmetry, and positive
    /// definiteness of the covariance. Sparsity is the count of exactly
    /// nonzero coefficients.
    pub fn new(beta: DVector<f64>, sigma: f64, sigma_mat: DMatrix<f64>) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::parameter(format!(
                "noise level sigma must be positive and finite, got {sigma}"
            )));
        }
        let p = beta.len();
        if p == 0 {
            return Err(Error::parameter("coefficient vector must be non-empty"));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("coefficient vector has non-finite entries"));
        }
        if sigma_mat.nrows() != p || sigma_mat.ncols() != p {
            return Err(Error::parameter(format!(
                "covariance must be {p}x{p}, got {}x{}",
                sigma_mat.nrows(),
                sigma_mat.ncols()
            )));
        }
        if sigma_mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("covariance has non-finite entries"));
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let a = sigma_mat[(i, j)];
                let b = sigma_mat[(j, i)];
                if (a - b).abs() > SYMMETRY_TOL * 1.0_f64.max(a.abs().max(b.abs())) {
                    return Err(Error::parameter(format!(
                        "covariance is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        if sigma_mat.clone().cholesky().is_none() {
            return Err(Error::parameter(
                "covariance must be positive definite (Cholesky factorization failed)",
            ));
        }
        let sparsity = beta.iter().filter(|v| **v != 0.0).count();
        Ok(GroundTruth {
            beta,
            sigma,
            sigma_mat,
            sparsity,
        })
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma_mat(&self) -> &DMatrix<f64> {
        &self.sigma_mat
    }

    /// Number of exactly nonzero coefficients.
    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Signal-to-noise ratio `theta = beta' Sigma beta / sigma^2`.
    pub fn signal_strength(&self) -> f64 {
        let quad = (&self.sigma_mat * &self.beta).dot(&self.beta);
        quad / (self.sigma * self.sigma)
    }

    /// Proportion of explained variance `eta = theta / (1 + theta)`, in [0, 1).
    pub fn true_eta(&self) -> f64 {
        let theta = self.signal_strength();
        theta / (1.0 + theta)
    }
}

/// Which estimator produced an [`EtaEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Quadratic-form estimator with a caller-supplied precision matrix.
    #[serde(rename = "dense")]
    DenseKnownOmega,
    /// Quadratic-form estimator with an estimated precision matrix plugged in.
    #[serde(rename = "dense-plug-in")]
    DensePlugIn,
    /// Square-root-Lasso residual-variance estimator.
    #[serde(rename = "sl")]
    SqrtLasso,
    /// Sparsity-adaptive combination of the dense and sparse estimators.
    #[serde(rename = "adaptive")]
    Adaptive,
    /// Adaptive combination using a constrained-l1 precision estimate fitted
    /// on an independent half sample.
    #[serde(rename = "adaptive-clime")]
    AdaptiveClime,
    /// Known-noise-level dense estimator.
    #[serde(rename = "dense-ks")]
    KnownSigmaDense,
    /// Gauss-Lasso refitting estimator with known noise level.
    #[serde(rename = "gl-ks")]
    GaussLassoKnownSigma,
}

impl Method {
    /// Stable lower-case label used in CSV/JSON output.
    pub fn label(&self) -> &'static str {
        match self {
            Method::DenseKnownOmega => "dense",
            Method::DensePlugIn => "dense-plug-in",
            Method::SqrtLasso => "sl",
            Method::Adaptive => "adaptive",
            Method::AdaptiveClime => "adaptive-clime",
            Method::KnownSigmaDense => "dense-ks",
            Method::GaussLassoKnownSigma => "gl-ks",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// An estimate of eta together with its truncation to [0, 1] and
/// method-specific diagnostics (ordered map so serialized output is stable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub raw: f64,
    pub truncated: f64,
    pub method: Method,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EtaEstimate {
    /// Wraps a raw estimate; the truncated value is `min(1, max(0, raw))`.
    pub fn new(raw: f64, method: Method) -> Self {
        assert!(raw.is_finite(), "estimators must produce finite values");
        EtaEstimate {
            raw,
            truncated: raw.clamp(0.0, 1.0),
            method,
            diagnostics: BTreeMap::new(),
        }
    }

    pub(crate) fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}
