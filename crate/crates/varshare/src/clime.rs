//! Constrained-l1 precision matrix estimation.
//!
//! Each column `j` of the precision estimate solves
//!
//! `min |w|_1  subject to  |Sigma_hat w - e_j|_inf <= lambda_n`
//!
//! exactly, via the split `w = w+ - w-` turned into a linear program over
//! `2p` non-negative variables and `2p` inequality rows, solved with the
//! deterministic simplex in [`crate::lp`]. The column solutions are then
//! symmetrized entrywise by keeping the smaller-magnitude member of each
//! `(i,j)/(j,i)` pair, which makes the result exactly symmetric.
//!
//! The estimate is meant to be computed on a sample half that is independent
//! of the half used for the explained-variance statistic; [`split_sample`]
//! provides the split and the row bookkeeping.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LpError};
use crate::model::Dataset;

/// An estimated precision matrix with its certificate quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    /// Symmetrized estimate (exactly symmetric).
    pub omega_hat: DMatrix<f64>,
    /// Constraint level used for the column programs.
    pub lambda_n: f64,
    /// Largest violation of the column constraints across all columns
    /// (non-negative; zero up to solver tolerance for feasible solutions).
    pub feasibility_gap: f64,
    /// Whether the entrywise symmetrization step ran (always true once
    /// fitted; the matrix is then symmetric bit for bit).
    pub symmetric: bool,
    /// Smallest (signed) eigenvalue of the symmetrized estimate.
    pub min_eigenvalue: f64,
    /// Smallest and largest absolute eigenvalues, for conditioning reports.
    pub min_abs_eigenvalue: f64,
    pub max_abs_eigenvalue: f64,
    /// Row indices of the sample used to form the empirical covariance.
    pub sample_rows: Vec<usize>,
}

impl PrecisionEstimate {
    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.min_abs_eigenvalue
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.max_abs_eigenvalue
    }
}

/// How to split a sample into an estimation half and a precision half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// Even-numbered rows (0, 2, ...) for estimation, odd rows for the
    /// precision matrix.
    EvenOdd,
    /// First `ceil(n/2)` rows for estimation, the rest for the precision
    /// matrix.
    FirstHalf,
}

/// A half-sample split with the original row indices of both parts.
#[derive(Debug, Clone)]
pub struct SplitSample {
    pub eta_data: Dataset,
    pub omega_data: Dataset,
    pub eta_rows: Vec<usize>,
    pub omega_rows: Vec<usize>,
}

/// Splits a dataset in two halves whose sizes differ by at most one.
pub fn split_sample(data: &Dataset, policy: SplitPolicy) -> Result<SplitSample> {
    let n = data.n();
    if n < 2 {
        return Err(Error::data(format!(
            "sample splitting requires at least 2 observations, got {n}"
        )));
    }
    let (eta_rows, omega_rows): (Vec<usize>, Vec<usize>) = match policy {
        SplitPolicy::EvenOdd => ((0..n).step_by(2).collect(), (1..n).step_by(2).collect()),
        SplitPolicy::FirstHalf => {
            let cut = n.div_ceil(2);
            ((0..cut).collect(), (cut..n).collect())
        }
    };
    Ok(SplitSample {
        eta_data: data.select_rows(&eta_rows)?,
        omega_data: data.select_rows(&omega_rows)?,
        eta_rows,
        omega_rows,
    })
}

/// Empirical second-moment matrix `X'X / n` (no mean centering; the model
/// has centered covariates).
pub fn empirical_covariance(data: &Dataset) -> DMatrix<f64> {
    let n = data.n() as f64;
    (data.x().transpose() * data.x()) / n
}

/// Theory-driven constraint level
/// `2 max(25, m1) (3 + e^3 max(5, sqrt(m1))^2) m sqrt(ln p / n)`,
/// where `m` bounds the l1->l1 operator norm of the precision matrix and
/// `m1` its eigenvalue range. Far too conservative for data analysis; see
/// [`lambda_pragmatic`].
pub fn lambda_theoretical(n: usize, p: usize, m: f64, m1: f64) -> Result<f64> {
    check_lambda_inputs(n, p)?;
    if !(m.is_finite() && m >= 1.0) || !(m1.is_finite() && m1 >= 1.0) {
        return Err(Error::parameter(format!(
            "matrix class bounds must be finite and at least 1, got m={m}, m1={m1}"
        )));
    }
    let lead = 2.0 * 25.0_f64.max(m1);
    let inner = 3.0 + 3.0_f64.exp() * 5.0_f64.max(m1.sqrt()).powi(2);
    Ok(lead * inner * m * ((p as f64).ln() / n as f64).sqrt())
}

/// Default multiplier for [`lambda_pragmatic`].
pub const DEFAULT_LAMBDA_SCALE: f64 = 2.0;

/// Pragmatic constraint level `c m_l1 sqrt(ln p / n)` used for benchmarks
/// and data analysis (`m_l1` bounds the l1->l1 norm of the target).
pub fn lambda_pragmatic(n: usize, p: usize, m_l1: f64, c: f64) -> Result<f64> {
    check_lambda_inputs(n, p)?;
    if !(m_l1.is_finite() && m_l1 > 0.0) || !(c.is_finite() && c > 0.0) {
        return Err(Error::parameter(format!(
            "lambda multipliers must be positive, got m_l1={m_l1}, c={c}"
        )));
    }
    Ok(c * m_l1 * ((p as f64).ln() / n as f64).sqrt())
}

fn check_lambda_inputs(n: usize, p: usize) -> Result<()> {
    if n == 0 || p < 2 {
        return Err(Error::parameter(format!(
            "constraint level needs n >= 1 and p >= 2, got n={n}, p={p}"
        )));
    }
    Ok(())
}

/// Constraint matrix of the split linear-program formulation, shared by all
/// column programs:
/// `[ S  -S ]` with right-hand side `e_j + lambda`,
/// `[-S   S ]`                      `lambda - e_j`.
fn split_constraint_matrix(sigma_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let p = sigma_hat.nrows();
    let mut a = DMatrix::zeros(2 * p, 2 * p);
    for i in 0..p {
        for j in 0..p {
            let s = sigma_hat[(i, j)];
            a[(i, j)] = s;
            a[(i, p + j)] = -s;
            a[(p + i, j)] = -s;
            a[(p + i, p + j)] = s;
        }
    }
    a
}

/// Solves the column-`j` program `min |w|_1 s.t. |sigma_hat w - e_j|_inf <=
/// lambda_n` given the shared split constraint matrix.
fn solve_column(a: &DMatrix<f64>, p: usize, j: usize, lambda_n: f64) -> Result<Vec<f64>> {
    let cost = vec![1.0; 2 * p];
    let mut b = vec![lambda_n; 2 * p];
    b[j] += 1.0;
    b[p + j] -= 1.0;
    match lp::solve_min(&cost, a, &b) {
        Ok(sol) => Ok((0..p).map(|i| sol.x[i] - sol.x[p + i]).collect()),
        Err(LpError::Infeasible { residual }) => Err(Error::estimation(format!(
            "column {} program is infeasible at lambda_n={lambda_n} \
             (phase-1 residual {residual:.3e}); increase lambda_n",
            j + 1
        ))),
        Err(e) => Err(Error::estimation(format!(
            "column {} program failed: {e}",
            j + 1
        ))),
    }
}

/// Solves a single column program and returns the raw (pre-symmetrization)
/// solution; exposed so the linear-program layer can be validated against
/// independent solvers.
pub fn clime_column(sigma_hat: &DMatrix<f64>, j: usize, lambda_n: f64) -> Result<DVector<f64>> {
    let p = sigma_hat.nrows();
    if p == 0 || sigma_hat.ncols() != p {
        return Err(Error::parameter(format!(
            "covariance estimate must be square and non-empty, got {}x{}",
            p,
            sigma_hat.ncols()
        )));
    }
    if j >= p {
        return Err(Error::parameter(format!(
            "column index {j} out of range for a {p}x{p} covariance estimate"
        )));
    }
    if !(lambda_n.is_finite() && lambda_n >= 0.0) {
        return Err(Error::parameter(format!(
            "constraint level must be non-negative and finite, got {lambda_n}"
        )));
    }
    let a = split_constraint_matrix(sigma_hat);
    solve_column(&a, p, j, lambda_n).map(DVector::from_vec)
}

/// Solves the constrained-l1 column programs for a given covariance estimate
/// and symmetrizes the result. `sample_rows` of the output is left empty;
/// use [`fit_clime_from_data`] or [`fit_clime_split`] to track provenance.
pub fn fit_clime(
    sigma_hat: &DMatrix<f64>,
    lambda_n: f64,
    lp_tolerance: f64,
) -> Result<PrecisionEstimate> {
    let p = sigma_hat.nrows();
    if p == 0 || sigma_hat.ncols() != p {
        return Err(Error::parameter(format!(
            "covariance estimate must be square and non-empty, got {}x{}",
            p,
            sigma_hat.ncols()
        )));
    }
    if sigma_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("covariance estimate has non-finite entries"));
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let a = sigma_hat[(i, j)];
            let b = sigma_hat[(j, i)];
            if (a - b).abs() > 1e-8 * 1.0_f64.max(a.abs().max(b.abs())) {
                return Err(Error::parameter(format!(
                    "covariance estimate is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    if !(lambda_n.is_finite() && lambda_n >= 0.0) {
        return Err(Error::parameter(format!(
            "constraint level must be non-negative and finite, got {lambda_n}"
        )));
    }
    if !(lp_tolerance.is_finite() && lp_tolerance > 0.0) {
        return Err(Error::parameter(format!(
            "lp tolerance must be positive, got {lp_tolerance}"
        )));
    }

    let a = split_constraint_matrix(sigma_hat);
    let columns: Vec<Result<Vec<f64>>> = (0..p)
        .into_par_iter()
        .map(|j| solve_column(&a, p, j, lambda_n))
        .collect();

    let mut omega_one = DMatrix::zeros(p, p);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for i in 0..p {
            omega_one[(i, j)] = col[i];
        }
    }

    // Feasibility certificate for every column.
    let mut gap = 0.0_f64;
    for j in 0..p {
        let col = omega_one.column(j);
        let resid = sigma_hat * col;
        for i in 0..p {
            let target = if i == j { 1.0 } else { 0.0 };
            gap = gap.max((resid[i] - target).abs() - lambda_n);
        }
    }
    let gap = gap.max(0.0);
    if gap > lp_tolerance {
        return Err(Error::estimation(format!(
            "solver returned an infeasible column set: constraint gap {gap:.3e} \
             exceeds tolerance {lp_tolerance:.3e}"
        )));
    }

    // Entrywise symmetrization: keep the smaller-magnitude entry of each
    // pair; on exact magnitude ties keep the upper-triangle entry for both
    // positions so the result is symmetric bit for bit.
    let mut omega = omega_one.clone();
    for i in 0..p {
        for j in (i + 1)..p {
            let upper = omega_one[(i, j)];
            let lower = omega_one[(j, i)];
            let chosen = if upper.abs() <= lower.abs() { upper } else { lower };
            omega[(i, j)] = chosen;
            omega[(j, i)] = chosen;
        }
    }

    let eig = omega.clone().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let min_abs = eig
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(f64::INFINITY, f64::min);
    let max_abs = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);

    Ok(PrecisionEstimate {
        omega_hat: omega,
        lambda_n,
        feasibility_gap: gap,
        symmetric: true,
        min_eigenvalue,
        min_abs_eigenvalue: min_abs,
        max_abs_eigenvalue: max_abs,
        sample_rows: Vec::new(),
    })
}

/// Fits the precision estimate on a whole dataset, recording its rows.
pub fn fit_clime_from_data(
    data: &Dataset,
    lambda_n: f64,
    lp_tolerance: f64,
) -> Result<PrecisionEstimate> {
    let sigma_hat = empirical_covariance(data);
    let mut est = fit_clime(&sigma_hat, lambda_n, lp_tolerance)?;
    est.sample_rows = (0..data.n()).collect();
    Ok(est)
}

/// Splits the sample, fits the precision estimate on the second half, and
/// returns the first half (for the explained-variance statistic) along with
/// the estimate carrying the original row indices it was computed from.
pub fn fit_clime_split(
    data: &Dataset,
    policy: SplitPolicy,
    lambda_n: f64,
    lp_tolerance: f64,
) -> Result<(Dataset, PrecisionEstimate)> {
    let split = split_sample(data, policy)?;
    let sigma_hat = empirical_covariance(&split.omega_data);
    let mut est = fit_clime(&sigma_hat, lambda_n, lp_tolerance)?;
    est.sample_rows = split.omega_rows;
    Ok((split.eta_data, est))
}
