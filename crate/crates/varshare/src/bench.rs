//! Monte Carlo harness: sweeps (n, p, k, eta, covariance) grids, runs the
//! estimators on shared per-replicate datasets, aggregates empirical risk,
//! and fits log-log rate slopes.
//!
//! Determinism contract: given an identical [`BenchConfig`] (including
//! `base_seed`), the numeric results are identical bit for bit regardless of
//! the thread-pool size. Replicates run in parallel but are collected in
//! index order and reduced sequentially; every replicate derives its seed as
//! `base_seed + replicate_index`. Within a cell, all estimators see the same
//! datasets, so paired comparisons are valid. Wall-clock timings are
//! recorded separately and never enter the CSV output.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{eta_adaptive, eta_adaptive_clime, AdaptiveConfig};
use crate::clime::{fit_clime_split, lambda_pragmatic, SplitPolicy, DEFAULT_LAMBDA_SCALE};
use crate::dense::{eta_dense, eta_dense_plugin, OmegaRef};
use crate::error::{Error, Result};
use crate::known_sigma::{eta_dense_known_sigma, eta_gauss_lasso};
use crate::model::GroundTruth;
use crate::simulate::{calibrate_beta, sample_dataset, BetaKind, BetaSpec, CovarianceSpec};
use crate::sqrt_lasso::{eta_sqrt_lasso, fit_sqrt_lasso, SqrtLassoParams};

/// Fraction of failed replicates above which a (cell, estimator) row is
/// flagged invalid.
pub const FAILURE_CAP: f64 = 0.02;

/// One estimator to run inside a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    /// Returns the true eta; a zero-risk control row.
    Oracle,
    /// Dense estimator with the identity precision (whitened designs).
    Dense,
    /// Dense estimator with the true precision implied by the cell covariance.
    DenseTrueOmega,
    /// Square-root-Lasso estimator.
    SqrtLasso { lambda0: Option<f64> },
    /// Adaptive rule with a known (identity) precision for the dense branch.
    Adaptive { c0: f64, lambda0: Option<f64> },
    /// Dense estimator with a constrained-l1 precision estimate fitted on an
    /// independent half sample. `lambda: None` derives the constraint level
    /// from the true precision's l1 norm (available inside a benchmark).
    ClimePlugin {
        lambda: Option<f64>,
        policy: SplitPolicy,
    },
    /// Adaptive rule with the half-sample plug-in in the dense branch.
    AdaptiveClime {
        c0: f64,
        lambda0: Option<f64>,
        lambda: Option<f64>,
        policy: SplitPolicy,
    },
    /// Operator-norm error of the half-sample precision estimate itself
    /// (value is the error, compared against a target of zero).
    ClimeOpError {
        lambda: Option<f64>,
        policy: SplitPolicy,
    },
    /// Known-noise-level dense estimator (uses the cell's true sigma).
    KnownSigma,
    /// Gauss-Lasso refit with the cell's true sigma.
    GaussLasso { lambda0: Option<f64> },
}

impl EstimatorSpec {
    /// Stable label used in CSV rows and slope keys.
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorSpec::Oracle => "oracle",
            EstimatorSpec::Dense => "dense",
            EstimatorSpec::DenseTrueOmega => "dense-true-omega",
            EstimatorSpec::SqrtLasso { .. } => "sl",
            EstimatorSpec::Adaptive { .. } => "adaptive",
            EstimatorSpec::ClimePlugin { .. } => "dense-plug-in",
            EstimatorSpec::AdaptiveClime { .. } => "adaptive-clime",
            EstimatorSpec::ClimeOpError { .. } => "clime-op-error",
            EstimatorSpec::KnownSigma => "dense-ks",
            EstimatorSpec::GaussLasso { .. } => "gl-ks",
        }
    }
}

/// One grid cell: a data-generating configuration plus the estimators to
/// run on it. `k >= p` (or `k = 0` with `eta = 0`) selects a dense Gaussian
/// coefficient pattern; `1 <= k < p` selects a k-sparse equal-magnitude
/// pattern. The coefficient vector is calibrated so the cell's explained
/// variance equals `eta` exactly, and is shared by every cell with the same
/// `(p, k, eta)` under the same base seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub eta: f64,
    pub cov_spec: CovarianceSpec,
    pub estimators: Vec<EstimatorSpec>,
    pub replicates: usize,
    /// Optional grouping label: cells sharing a series get a rate-slope fit
    /// per estimator across their `n` values.
    #[serde(default)]
    pub series: Option<String>,
}

/// A benchmark sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub grid: Vec<CellConfig>,
    pub base_seed: u64,
    /// Advisory output directory (the CLI's `--out` takes precedence).
    #[serde(default)]
    pub output_path: Option<String>,
}

/// Aggregated statistics for one (cell, estimator) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub series: Option<String>,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub eta_true: f64,
    pub estimator: String,
    pub replicates: usize,
    pub successes: usize,
    pub failures: usize,
    pub flagged_invalid: bool,
    pub mean_sq_error: f64,
    pub rmse: f64,
    pub bias: f64,
    pub median_abs_error: f64,
    pub mc_stderr: f64,
    /// Mean wall-clock seconds per successful replicate (excluded from CSV).
    pub mean_runtime: f64,
}

/// Ordinary-least-squares fit of `log(rmse)` against `log(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub r2: f64,
}

/// Full sweep output: per-(cell, estimator) rows in grid order plus slope
/// fits keyed `series/estimator`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub base_seed: u64,
    pub cells: Vec<CellStats>,
    pub slopes: BTreeMap<String, SlopeFit>,
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    // SplitMix64-style finalizer over the packed inputs.
    let mut z = a
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(b.rotate_left(17))
        .wrapping_add(c.rotate_left(43));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn cell_truth(cell: &CellConfig, base_seed: u64) -> Result<GroundTruth> {
    if cell.cov_spec.dim() != cell.p {
        return Err(Error::parameter(format!(
            "cell covariance has dimension {}, expected p={}",
            cell.cov_spec.dim(),
            cell.p
        )));
    }
    let beta_seed = mix_seed(base_seed, cell.p as u64 ^ (cell.k as u64) << 24, cell.eta.to_bits());
    let kind = if cell.eta == 0.0 || cell.k == 0 {
        BetaKind::DenseGaussian { target_eta: 0.0 }
    } else if cell.k >= cell.p {
        BetaKind::DenseGaussian {
            target_eta: cell.eta,
        }
    } else {
        BetaKind::SparseEqualMagnitude {
            k: cell.k,
            target_eta: cell.eta,
        }
    };
    calibrate_beta(
        &BetaSpec {
            kind,
            seed: beta_seed,
        },
        &cell.cov_spec,
        1.0,
    )
}

/// True precision for the cell, from the closed form when available, else
/// by inverting the realized covariance.
fn cell_precision(cell: &CellConfig) -> Result<nalgebra::DMatrix<f64>> {
    if let Some(omega) = cell.cov_spec.true_precision()? {
        return Ok(omega);
    }
    let sigma = cell.cov_spec.realize()?;
    sigma
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::parameter("cell covariance is not positive definite"))
}

fn auto_lambda(
    lambda: Option<f64>,
    omega_true: &nalgebra::DMatrix<f64>,
    n_half: usize,
    p: usize,
) -> Result<f64> {
    match lambda {
        Some(v) => Ok(v),
        None => {
            let m_l1 = omega_true
                .column_iter()
                .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            lambda_pragmatic(n_half, p, m_l1, DEFAULT_LAMBDA_SCALE)
        }
    }
}

fn sl_params(lambda0: Option<f64>) -> SqrtLassoParams {
    SqrtLassoParams {
        lambda0,
        ..SqrtLassoParams::default()
    }
}

fn op_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
}

/// Runs one estimator on one replicate dataset. Returns the scalar value
/// whose squared deviation from the cell target enters the risk.
fn run_estimator(
    spec: &EstimatorSpec,
    data: &crate::model::Dataset,
    gt: &GroundTruth,
    omega_true: &nalgebra::DMatrix<f64>,
) -> Result<f64> {
    match spec {
        EstimatorSpec::Oracle => Ok(gt.true_eta()),
        EstimatorSpec::Dense => Ok(eta_dense(data, OmegaRef::Identity)?.truncated),
        EstimatorSpec::DenseTrueOmega => {
            Ok(eta_dense(data, OmegaRef::Matrix(omega_true))?.truncated)
        }
        EstimatorSpec::SqrtLasso { lambda0 } => {
            Ok(eta_sqrt_lasso(data, &sl_params(*lambda0))?.0.truncated)
        }
        EstimatorSpec::Adaptive { c0, lambda0 } => {
            let cfg = AdaptiveConfig::manual(*c0)?;
            Ok(eta_adaptive(data, OmegaRef::Identity, &sl_params(*lambda0), &cfg)?
                .0
                .truncated)
        }
        EstimatorSpec::ClimePlugin { lambda, policy } => {
            let lam = auto_lambda(*lambda, omega_true, data.n() / 2, data.p())?;
            let (eta_half, omega_hat) = fit_clime_split(data, *policy, lam, 1e-8)?;
            Ok(eta_dense_plugin(&eta_half, &omega_hat)?.truncated)
        }
        EstimatorSpec::AdaptiveClime {
            c0,
            lambda0,
            lambda,
            policy,
        } => {
            let lam = auto_lambda(*lambda, omega_true, data.n() / 2, data.p())?;
            let (eta_half, omega_hat) = fit_clime_split(data, *policy, lam, 1e-8)?;
            let cfg = AdaptiveConfig::manual(*c0)?;
            Ok(eta_adaptive_clime(&eta_half, &omega_hat, &sl_params(*lambda0), &cfg)?
                .0
                .truncated)
        }
        EstimatorSpec::ClimeOpError { lambda, policy } => {
            let lam = auto_lambda(*lambda, omega_true, data.n() / 2, data.p())?;
            let (_, omega_hat) = fit_clime_split(data, *policy, lam, 1e-8)?;
            Ok(op_norm(&(&omega_hat.omega_hat - omega_true)))
        }
        EstimatorSpec::KnownSigma => Ok(eta_dense_known_sigma(data, gt.sigma())?.truncated),
        EstimatorSpec::GaussLasso { lambda0 } => {
            let fit = fit_sqrt_lasso(data, &sl_params(*lambda0))?;
            Ok(eta_gauss_lasso(data, gt.sigma(), &fit)?.0.truncated)
        }
    }
}

/// The target the estimator's value is compared against.
fn cell_target(spec: &EstimatorSpec, gt: &GroundTruth) -> f64 {
    match spec {
        EstimatorSpec::ClimeOpError { .. } => 0.0,
        _ => gt.true_eta(),
    }
}

fn validate(cfg: &BenchConfig) -> Result<()> {
    if cfg.grid.is_empty() {
        return Err(Error::parameter("benchmark grid is empty"));
    }
    for (i, cell) in cfg.grid.iter().enumerate() {
        if cell.replicates < 2 {
            return Err(Error::parameter(format!(
                "cell {i}: replicates must be at least 2, got {}",
                cell.replicates
            )));
        }
        if cell.n < 2 || cell.p < 1 {
            return Err(Error::parameter(format!(
                "cell {i}: need n >= 2 and p >= 1, got n={}, p={}",
                cell.n, cell.p
            )));
        }
        if cell.estimators.is_empty() {
            return Err(Error::parameter(format!("cell {i}: no estimators listed")));
        }
        if !(cell.eta.is_finite() && (0.0..1.0).contains(&cell.eta)) {
            return Err(Error::parameter(format!(
                "cell {i}: eta must lie in [0, 1), got {}",
                cell.eta
            )));
        }
    }
    Ok(())
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Runs the full sweep. Replicate failures are counted and excluded; a row
/// is flagged invalid when more than [`FAILURE_CAP`] of its replicates fail.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    validate(cfg)?;
    let mut cells_out = Vec::new();
    for cell in &cfg.grid {
        let gt = cell_truth(cell, cfg.base_seed)?;
        let needs_omega = cell.estimators.iter().any(|e| {
            matches!(
                e,
                EstimatorSpec::DenseTrueOmega
                    | EstimatorSpec::ClimePlugin { .. }
                    | EstimatorSpec::AdaptiveClime { .. }
                    | EstimatorSpec::ClimeOpError { .. }
            )
        });
        let omega_true = if needs_omega {
            cell_precision(cell)?
        } else {
            nalgebra::DMatrix::identity(cell.p, cell.p)
        };

        // (estimator index, value or failure, runtime) per replicate, in
        // replicate order irrespective of the parallel schedule.
        let per_rep: Vec<Vec<(Option<f64>, f64)>> = (0..cell.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let seed = cfg.base_seed.wrapping_add(r);
                let data = match sample_dataset(&gt, cell.n, seed) {
                    Ok(d) => d,
                    Err(_) => {
                        return vec![(None, 0.0); cell.estimators.len()];
                    }
                };
                cell.estimators
                    .iter()
                    .map(|spec| {
                        let start = Instant::now();
                        let value = run_estimator(spec, &data, &gt, &omega_true).ok();
                        (value, start.elapsed().as_secs_f64())
                    })
                    .collect()
            })
            .collect();

        for (e_idx, spec) in cell.estimators.iter().enumerate() {
            let target = cell_target(spec, &gt);
            let mut errors = Vec::with_capacity(cell.replicates);
            let mut runtime_total = 0.0;
            let mut failures = 0usize;
            for rep in &per_rep {
                match rep[e_idx].0 {
                    Some(v) => {
                        errors.push(v - target);
                        runtime_total += rep[e_idx].1;
                    }
                    None => failures += 1,
                }
            }
            let successes = errors.len();
            let m = successes as f64;
            let (mse, bias, stderr, median_abs) = if successes > 0 {
                let mse = errors.iter().map(|e| e * e).sum::<f64>() / m;
                let bias = errors.iter().sum::<f64>() / m;
                let var_of_sq = errors
                    .iter()
                    .map(|e| (e * e - mse).powi(2))
                    .sum::<f64>()
                    / m;
                let stderr = (var_of_sq / m).sqrt();
                let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
                abs.sort_by(|a, b| a.total_cmp(b));
                (mse, bias, stderr, median_of_sorted(&abs))
            } else {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            };
            let flagged = (failures as f64) > FAILURE_CAP * cell.replicates as f64;
            cells_out.push(CellStats {
                series: cell.series.clone(),
                n: cell.n,
                p: cell.p,
                k: cell.k,
                eta_true: gt.true_eta(),
                estimator: spec.label().to_string(),
                replicates: cell.replicates,
                successes,
                failures,
                flagged_invalid: flagged,
                mean_sq_error: mse,
                rmse: mse.sqrt(),
                bias,
                median_abs_error: median_abs,
                mc_stderr: stderr,
                mean_runtime: if successes > 0 {
                    runtime_total / m
                } else {
                    f64::NAN
                },
            });
        }
    }

    // Slope fits per (series, estimator) over that series' n grid.
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for stats in &cells_out {
        if let Some(series) = &stats.series {
            if stats.rmse.is_finite() && stats.rmse > 0.0 && !stats.flagged_invalid {
                groups
                    .entry(format!("{}/{}", series, stats.estimator))
                    .or_default()
                    .push((stats.n as f64, stats.rmse));
            }
        }
    }
    let mut slopes = BTreeMap::new();
    for (key, points) in groups {
        if points.len() >= 3 {
            slopes.insert(key, fit_rate_slope(&points)?);
        }
    }

    Ok(BenchResult {
        base_seed: cfg.base_seed,
        cells: cells_out,
        slopes,
    })
}

/// Least-squares fit of `log(rmse)` on `log(n)`.
pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::parameter(format!(
            "slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for &(n, rmse) in points {
        if !(n > 0.0 && rmse > 0.0 && n.is_finite() && rmse.is_finite()) {
            return Err(Error::parameter(format!(
                "slope fit needs positive finite points, got ({n}, {rmse})"
            )));
        }
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, r)| r.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / m;
    let y_bar = ys.iter().sum::<f64>() / m;
    let sxx = xs.iter().map(|x| (x - x_bar).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::parameter(
            "slope fit needs at least two distinct n values",
        ));
    }
    let sxy = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_bar) * (y - y_bar))
        .sum::<f64>();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let ss_res = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>();
    let ss_tot = ys.iter().map(|y| (y - y_bar).powi(2)).sum::<f64>();
    let df = m - 2.0;
    let stderr = if df > 0.0 {
        (ss_res / df / sxx).sqrt()
    } else {
        0.0
    };
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(SlopeFit { slope, stderr, r2 })
}

/// Renders `results.csv`: one row per (cell, estimator), timings excluded
/// so outputs are reproducible bit for bit.
pub fn results_csv_string(result: &BenchResult) -> String {
    let mut out = String::from(
        "series,n,p,k,eta_true,estimator,replicates,successes,failures,\
         flagged_invalid,mean_sq_error,rmse,bias,median_abs_error,mc_stderr\n",
    );
    for c in &result.cells {
        let series = c.series.as_deref().unwrap_or("");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            series,
            c.n,
            c.p,
            c.k,
            c.eta_true,
            c.estimator,
            c.replicates,
            c.successes,
            c.failures,
            c.flagged_invalid,
            c.mean_sq_error,
            c.rmse,
            c.bias,
            c.median_abs_error,
            c.mc_stderr
        ));
    }
    out
}

/// Renders `summary.json`: slope fits plus per-row runtime means (the one
/// place timings are reported).
pub fn summary_json_string(result: &BenchResult) -> Result<String> {
    #[derive(Serialize)]
    struct RuntimeEntry {
        series: Option<String>,
        n: usize,
        p: usize,
        estimator: String,
        mean_runtime_seconds: f64,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        base_seed: u64,
        slopes: &'a BTreeMap<String, SlopeFit>,
        runtimes: Vec<RuntimeEntry>,
    }
    let summary = Summary {
        base_seed: result.base_seed,
        slopes: &result.slopes,
        runtimes: result
            .cells
            .iter()
            .map(|c| RuntimeEntry {
                series: c.series.clone(),
                n: c.n,
                p: c.p,
                estimator: c.estimator.clone(),
                mean_runtime_seconds: c.mean_runtime,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&summary).map_err(|e| Error::format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cell(estimators: Vec<EstimatorSpec>) -> CellConfig {
        CellConfig {
            n: 40,
            p: 10,
            k: 10,
            eta: 0.4,
            cov_spec: CovarianceSpec::Identity { dim: 10 },
            estimators,
            replicates: 20,
            series: None,
        }
    }

    #[test]
    fn oracle_has_zero_risk() {
        let cfg = BenchConfig {
            grid: vec![small_cell(vec![EstimatorSpec::Oracle, EstimatorSpec::Dense])],
            base_seed: 5,
            output_path: None,
        };
        let result = run_bench(&cfg).unwrap();
        assert_eq!(result.cells.len(), 2);
        let oracle = &result.cells[0];
        assert_eq!(oracle.estimator, "oracle");
        assert_eq!(oracle.mean_sq_error, 0.0);
        assert_eq!(oracle.failures, 0);
        assert_relative_eq!(oracle.eta_true, 0.4, epsilon = 1e-12);
        // MSE >= bias^2 up to rounding.
        for c in &result.cells {
            assert!(c.mean_sq_error >= c.bias * c.bias - 1e-12);
        }
    }

    #[test]
    fn identical_configs_reproduce_bitwise() {
        let cfg = BenchConfig {
            grid: vec![small_cell(vec![
                EstimatorSpec::Dense,
                EstimatorSpec::SqrtLasso { lambda0: None },
                EstimatorSpec::KnownSigma,
            ])],
            base_seed: 77,
            output_path: None,
        };
        let a = run_bench(&cfg).unwrap();
        let b = run_bench(&cfg).unwrap();
        assert_eq!(results_csv_string(&a), results_csv_string(&b));
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.mean_sq_error.to_bits(), y.mean_sq_error.to_bits());
            assert_eq!(x.bias.to_bits(), y.bias.to_bits());
        }
    }

    #[test]
    fn thread_pool_size_does_not_change_results() {
        let cfg = BenchConfig {
            grid: vec![small_cell(vec![
                EstimatorSpec::Dense,
                EstimatorSpec::SqrtLasso { lambda0: None },
            ])],
            base_seed: 13,
            output_path: None,
        };
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = pool1.install(|| run_bench(&cfg)).unwrap();
        let b = pool4.install(|| run_bench(&cfg)).unwrap();
        assert_eq!(results_csv_string(&a), results_csv_string(&b));
    }

    #[test]
    fn shared_datasets_make_paired_rows() {
        // The dense estimator twice in one cell: identical rows.
        let cfg = BenchConfig {
            grid: vec![small_cell(vec![EstimatorSpec::Dense, EstimatorSpec::Dense])],
            base_seed: 3,
            output_path: None,
        };
        let result = run_bench(&cfg).unwrap();
        assert_eq!(
            result.cells[0].mean_sq_error.to_bits(),
            result.cells[1].mean_sq_error.to_bits()
        );
    }

    #[test]
    fn beta_is_shared_across_cells_with_same_shape() {
        let mut c1 = small_cell(vec![EstimatorSpec::Oracle]);
        let mut c2 = small_cell(vec![EstimatorSpec::Oracle]);
        c1.n = 40;
        c2.n = 80;
        let cfg = BenchConfig {
            grid: vec![c1, c2],
            base_seed: 9,
            output_path: None,
        };
        let result = run_bench(&cfg).unwrap();
        assert_eq!(
            result.cells[0].eta_true.to_bits(),
            result.cells[1].eta_true.to_bits()
        );
    }

    #[test]
    fn slope_fit_closed_forms() {
        // Exact power law: rmse = 1/n.
        let points: Vec<(f64, f64)> = [100.0, 200.0, 400.0, 800.0]
            .iter()
            .map(|&n| (n, 1.0 / n))
            .collect();
        let fit = fit_rate_slope(&points).unwrap();
        assert_relative_eq!(fit.slope, -1.0, epsilon = 1e-12);
        assert!(fit.stderr < 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);

        // Constant rmse: slope 0.
        let flat: Vec<(f64, f64)> = [100.0, 200.0, 400.0].iter().map(|&n| (n, 0.3)).collect();
        let fit = fit_rate_slope(&flat).unwrap();
        assert_relative_eq!(fit.slope, 0.0, epsilon = 1e-12);

        // Noisy square-root law stays near -1/2.
        let noisy: Vec<(f64, f64)> = [100.0f64, 200.0, 400.0, 800.0, 1600.0]
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let jitter = 1.0 + 0.01 * ((i as f64 * 2.399).sin());
                (n, 3.0 * n.powf(-0.5) * jitter)
            })
            .collect();
        let fit = fit_rate_slope(&noisy).unwrap();
        assert!(
            (-0.55..=-0.45).contains(&fit.slope),
            "slope {} drifted",
            fit.slope
        );

        assert!(fit_rate_slope(&points[..2]).is_err());
        assert!(fit_rate_slope(&[(100.0, 0.1), (200.0, 0.0), (400.0, 0.1)]).is_err());
    }

    #[test]
    fn series_slope_appears_in_result() {
        let mut grid = Vec::new();
        for n in [60usize, 120, 240] {
            grid.push(CellConfig {
                n,
                p: 8,
                k: 8,
                eta: 0.5,
                cov_spec: CovarianceSpec::Identity { dim: 8 },
                estimators: vec![EstimatorSpec::Dense],
                replicates: 40,
                series: Some("dense-rate".into()),
            });
        }
        let cfg = BenchConfig {
            grid,
            base_seed: 21,
            output_path: None,
        };
        let result = run_bench(&cfg).unwrap();
        let fit = result.slopes.get("dense-rate/dense").expect("slope fitted");
        assert!(fit.slope < 0.0, "risk should shrink with n, slope {}", fit.slope);
        let csv = results_csv_string(&result);
        assert!(csv.starts_with("series,n,p,k,eta_true,estimator"));
        assert!(!csv.contains("runtime"), "timings must stay out of the CSV");
        assert!(summary_json_string(&result).unwrap().contains("dense-rate/dense"));
    }

    #[test]
    fn config_validation_errors() {
        let mut cell = small_cell(vec![EstimatorSpec::Oracle]);
        cell.replicates = 1;
        let cfg = BenchConfig {
            grid: vec![cell],
            base_seed: 0,
            output_path: None,
        };
        assert!(run_bench(&cfg).is_err());

        let cfg = BenchConfig {
            grid: vec![],
            base_seed: 0,
            output_path: None,
        };
        assert!(run_bench(&cfg).is_err());

        let mut cell = small_cell(vec![]);
        cell.estimators = vec![];
        let cfg = BenchConfig {
            grid: vec![cell],
            base_seed: 0,
            output_path: None,
        };
        assert!(run_bench(&cfg).is_err());
    }

    #[test]
    fn clime_cells_run_and_report_precision_error() {
        let cell = CellConfig {
            n: 80,
            p: 12,
            k: 1,
            eta: 0.5,
            cov_spec: CovarianceSpec::BandedPrecision {
                dim: 12,
                bandwidth: 1,
                offdiag: 0.3,
            },
            estimators: vec![
                EstimatorSpec::ClimeOpError {
                    lambda: None,
                    policy: SplitPolicy::EvenOdd,
                },
                EstimatorSpec::ClimePlugin {
                    lambda: None,
                    policy: SplitPolicy::EvenOdd,
                },
            ],
            replicates: 6,
            series: None,
        };
        let cfg = BenchConfig {
            grid: vec![cell],
            base_seed: 31,
            output_path: None,
        };
        let result = run_bench(&cfg).unwrap();
        let op_row = &result.cells[0];
        assert_eq!(op_row.estimator, "clime-op-error");
        assert_eq!(op_row.failures, 0, "CLIME fits should succeed here");
        // The op-error row measures against zero: value equals the error.
        assert!(op_row.mean_sq_error > 0.0);
        assert!(op_row.bias > 0.0, "operator error is non-negative");
        let plug_row = &result.cells[1];
        assert_eq!(plug_row.estimator, "dense-plug-in");
        assert!(plug_row.successes > 0);
    }
}
