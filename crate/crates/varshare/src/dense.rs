//! Dense quadratic-form estimator of the explained variance.
//!
//! The centered statistic is `T = Y'(X X' - tr(X X') I_n / n) Y / n^2`; its
//! normalization `V = T n^2 / (|Y|^2 (n + 1))` estimates
//! `beta' Sigma^2 beta / Var(y)` without any sparsity assumption. With a
//! precision matrix `Omega = Sigma^{-1}` supplied (or an estimate plugged
//! in), the same construction applied to `X Omega X'` estimates eta itself:
//!
//! `etahat = Y'(X Omega X' - tr(X Omega X') I_n / n) Y / ((n + 1) |Y|^2)`.
//!
//! The trace centering may be replaced by the dimension `p` (the two agree in
//! expectation); both variants are exposed. Estimates are reported raw and
//! truncated to `[0, 1]`.

use nalgebra::DMatrix;

use crate::clime::PrecisionEstimate;
use crate::error::{Error, Result};
use crate::model::{Dataset, EtaEstimate, Method};
use crate::simulate::matrix_sqrt_spd;

/// Which centering constant to subtract inside the quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// Subtract `tr(X Omega X') / n` (the default).
    #[default]
    Trace,
    /// Subtract `p / n`.
    DimP,
}

/// A precision matrix argument: the identity fast path or an explicit
/// symmetric positive definite matrix.
#[derive(Debug, Clone, Copy)]
pub enum OmegaRef<'a> {
    Identity,
    Matrix(&'a DMatrix<f64>),
}

/// Intermediate quantities of the dense estimator, exposed for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDiagnostics {
    /// Centered quadratic statistic `T` (trace centering).
    pub t_stat: f64,
    /// Normalized statistic `V = T n^2 / (|Y|^2 (n + 1))`.
    pub v_hat: f64,
    /// `tr(X Omega X')`.
    pub trace_term: f64,
    /// Squared response norm.
    pub y_norm_sq: f64,
}

/// The centered statistic `T` with the identity precision.
pub fn t_statistic(data: &Dataset) -> f64 {
    let n = data.n() as f64;
    let v = data.x().transpose() * data.y();
    let q = v.norm_squared();
    let trace = data.x().iter().map(|e| e * e).sum::<f64>();
    (q - trace * data.y_norm_sq() / n) / (n * n)
}

fn validate_omega(omega: &DMatrix<f64>, p: usize) -> Result<()> {
    if omega.nrows() != p || omega.ncols() != p {
        return Err(Error::parameter(format!(
            "precision matrix must be {p}x{p}, got {}x{}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("precision matrix has non-finite entries"));
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let a = omega[(i, j)];
            let b = omega[(j, i)];
            if (a - b).abs() > 1e-8 * 1.0_f64.max(a.abs().max(b.abs())) {
                return Err(Error::parameter(format!(
                    "precision matrix is not symmetric at ({i},{j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// Computes the raw dense estimate and its diagnostics.
///
/// The quadratic form `Y' X Omega X' Y` is evaluated as the squared norm of
/// `Omega^{1/2} X' Y` (one symmetric square root per call), never forming the
/// `n x n` matrix.
pub fn dense_statistics(
    data: &Dataset,
    omega: OmegaRef<'_>,
    centering: Centering,
) -> Result<(f64, DenseDiagnostics)> {
    let n = data.n() as f64;
    let p = data.p() as f64;
    let y_norm_sq = data.y_norm_sq();

    let (q, trace_term) = match omega {
        OmegaRef::Identity => {
            let v = data.x().transpose() * data.y();
            let trace = data.x().iter().map(|e| e * e).sum::<f64>();
            (v.norm_squared(), trace)
        }
        OmegaRef::Matrix(m) => {
            validate_omega(m, data.p())?;
            let s = matrix_sqrt_spd(m)?;
            let v = data.x().transpose() * data.y();
            let q = (&s * v).norm_squared();
            let b = data.x() * &s;
            let trace = b.iter().map(|e| e * e).sum::<f64>();
            (q, trace)
        }
    };

    let t_stat = (q - trace_term * y_norm_sq / n) / (n * n);
    if y_norm_sq == 0.0 {
        let diag = DenseDiagnostics {
            t_stat,
            v_hat: 0.0,
            trace_term,
            y_norm_sq,
        };
        return Ok((f64::NAN, diag));
    }
    let v_hat = t_stat * n * n / (y_norm_sq * (n + 1.0));
    let center = match centering {
        Centering::Trace => trace_term,
        Centering::DimP => p,
    };
    let raw = (q - center * y_norm_sq / n) / ((n + 1.0) * y_norm_sq);
    let diag = DenseDiagnostics {
        t_stat,
        v_hat,
        trace_term,
        y_norm_sq,
    };
    Ok((raw, diag))
}

fn finish(raw: f64, diag: DenseDiagnostics, method: Method) -> EtaEstimate {
    if raw.is_nan() {
        // Degenerate all-zero response: report zero and flag it.
        return EtaEstimate::new(0.0, method)
            .with_diagnostic("degenerate", 1.0)
            .with_diagnostic("t_stat", diag.t_stat)
            .with_diagnostic("v_hat", diag.v_hat)
            .with_diagnostic("trace_term", diag.trace_term)
            .with_diagnostic("y_norm_sq", diag.y_norm_sq);
    }
    EtaEstimate::new(raw, method)
        .with_diagnostic("t_stat", diag.t_stat)
        .with_diagnostic("v_hat", diag.v_hat)
        .with_diagnostic("trace_term", diag.trace_term)
        .with_diagnostic("y_norm_sq", diag.y_norm_sq)
}

/// Dense estimator with a caller-supplied precision matrix and a choice of
/// centering constant.
pub fn eta_dense_with(
    data: &Dataset,
    omega: OmegaRef<'_>,
    centering: Centering,
) -> Result<EtaEstimate> {
    let (raw, diag) = dense_statistics(data, omega, centering)?;
    Ok(finish(raw, diag, Method::DenseKnownOmega))
}

/// Dense estimator with trace centering (the default configuration).
pub fn eta_dense(data: &Dataset, omega: OmegaRef<'_>) -> Result<EtaEstimate> {
    eta_dense_with(data, omega, Centering::Trace)
}

/// Dense estimator with an estimated precision matrix plugged in.
///
/// The estimate must come from a sample independent of `data` (use a half
/// split); near-singular plug-ins are rejected with a condition report.
pub fn eta_dense_plugin(data: &Dataset, omega_hat: &PrecisionEstimate) -> Result<EtaEstimate> {
    let p = data.p();
    let m = &omega_hat.omega_hat;
    if m.nrows() != p || m.ncols() != p {
        return Err(Error::parameter(format!(
            "plug-in precision is {}x{}, data has p={p}",
            m.nrows(),
            m.ncols()
        )));
    }
    if omega_hat.min_abs_eigenvalue() < 1e-10 {
        return Err(Error::estimation(format!(
            "plug-in precision is numerically singular: min |eigenvalue| = {:.3e}, max = {:.3e}",
            omega_hat.min_abs_eigenvalue(),
            omega_hat.max_abs_eigenvalue()
        )));
    }
    let n = data.n() as f64;
    let y_norm_sq = data.y_norm_sq();
    // The symmetrized plug-in need not be positive definite, so evaluate the
    // quadratic form directly instead of through a square root.
    let v = data.x().transpose() * data.y();
    let q = (m * &v).dot(&v);
    let b = data.x() * m;
    let trace_term = b
        .iter()
        .zip(data.x().iter())
        .map(|(a, c)| a * c)
        .sum::<f64>();
    let t_stat = (q - trace_term * y_norm_sq / n) / (n * n);
    if y_norm_sq == 0.0 {
        let diag = DenseDiagnostics {
            t_stat,
            v_hat: 0.0,
            trace_term,
            y_norm_sq,
        };
        return Ok(finish(f64::NAN, diag, Method::DensePlugIn));
    }
    let v_hat = t_stat * n * n / (y_norm_sq * (n + 1.0));
    let diag = DenseDiagnostics {
        t_stat,
        v_hat,
        trace_term,
        y_norm_sq,
    };
    let est = finish(v_hat, diag, Method::DensePlugIn)
        .with_diagnostic("omega_sample_size", omega_hat.sample_rows.len() as f64)
        .with_diagnostic("omega_lambda_n", omega_hat.lambda_n);
    Ok(est)
}
