//! Honest confidence intervals for the dense and square-root-Lasso
//! estimators, plus the chi-square tail thresholds used in their analysis.
//!
//! The dense interval has half-width `c sqrt(p) / n`; the sparse interval
//! has half-width `c (n^{-1/2} + (k ln p / n) cond(Sigma)^2)` under an
//! assumed sparsity `k`. The width constants are universal but
//! non-explicit, so defaults are calibrated by Monte Carlo: for each
//! reference setting (identity covariance, eta across a grid spanning the
//! null through strong signal) the `(1-alpha)`-quantile of the normalized
//! deviation `|estimate - eta| / rate` is computed, and the constant is the
//! maximum across settings.
//! Taking the maximum rather than pooling keeps coverage honest at the
//! hardest reference point (the pure-noise model, whose deviations are the
//! widest); pooling would undercover there. Calibrated constants are cached
//! per configuration behind a read-write lock.

use std::collections::BTreeMap;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{eta_dense, OmegaRef};
use crate::error::{Error, Result};
use crate::model::{EtaEstimate, GroundTruth, Method};
use crate::simulate::{calibrate_beta, sample_dataset, BetaKind, BetaSpec, CovarianceSpec};
use crate::sqrt_lasso::{eta_sqrt_lasso, SqrtLassoParams};

/// Which interval family a [`ConfidenceInterval`] belongs to.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum IcMethod {
    DenseIc,
    SparseIc,
}

/// Whether the width constant was calibrated or supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantSource {
    Calibrated,
    Manual,
}

/// A confidence interval for eta, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    /// Interval center (the truncated estimate, so the clipped interval is
    /// never empty).
    pub center: f64,
    /// Unclipped half-width.
    pub half_width: f64,
    /// Clipped endpoints, `0 <= lo <= hi <= 1`.
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    pub method: IcMethod,
    /// Sparsity level the sparse interval's width assumes.
    pub k_assumed: Option<usize>,
    pub constant_source: ConstantSource,
}

impl ConfidenceInterval {
    pub fn contains(&self, eta: f64) -> bool {
        self.lo <= eta && eta <= self.hi
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

fn check_c(c_alpha: f64) -> Result<()> {
    if !(c_alpha.is_finite() && c_alpha >= 0.0) {
        return Err(Error::parameter(format!(
            "width constant must be non-negative and finite, got {c_alpha}"
        )));
    }
    Ok(())
}

fn build(
    center: f64,
    half_width: f64,
    alpha: f64,
    method: IcMethod,
    k_assumed: Option<usize>,
    source: ConstantSource,
) -> ConfidenceInterval {
    ConfidenceInterval {
        center,
        half_width,
        lo: (center - half_width).clamp(0.0, 1.0),
        hi: (center + half_width).clamp(0.0, 1.0),
        alpha,
        method,
        k_assumed,
        constant_source: source,
    }
}

/// Interval around a dense estimate with half-width `c_alpha sqrt(p) / n`.
pub fn ci_dense(
    est: &EtaEstimate,
    n: usize,
    p: usize,
    alpha: f64,
    c_alpha: f64,
    source: ConstantSource,
) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    check_c(c_alpha)?;
    if !matches!(est.method, Method::DenseKnownOmega | Method::DensePlugIn) {
        return Err(Error::parameter(format!(
            "dense interval expects a dense estimate, got method {}",
            est.method
        )));
    }
    let half_width = c_alpha * (p as f64).sqrt() / n as f64;
    Ok(build(
        est.truncated,
        half_width,
        alpha,
        IcMethod::DenseIc,
        None,
        source,
    ))
}

/// Interval around a square-root-Lasso estimate with half-width
/// `c_alpha (n^{-1/2} + (k ln p / n) sigma_cond^2)`, where `sigma_cond` is
/// the covariance condition number `lambda_max / lambda_min` (1 for an
/// identity or whitened design).
#[allow(clippy::too_many_arguments)]
pub fn ci_sparse(
    est: &EtaEstimate,
    n: usize,
    p: usize,
    k: usize,
    sigma_cond: f64,
    alpha: f64,
    c_alpha: f64,
    source: ConstantSource,
) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    check_c(c_alpha)?;
    if est.method != Method::SqrtLasso {
        return Err(Error::parameter(format!(
            "sparse interval expects a square-root-Lasso estimate, got method {}",
            est.method
        )));
    }
    if k == 0 {
        return Err(Error::parameter("assumed sparsity k must be at least 1"));
    }
    if !(sigma_cond.is_finite() && sigma_cond >= 1.0) {
        return Err(Error::parameter(format!(
            "condition number must be finite and at least 1, got {sigma_cond}"
        )));
    }
    let nf = n as f64;
    let rate = nf.powf(-0.5) + (k as f64 * (p as f64).ln() / nf) * sigma_cond * sigma_cond;
    Ok(build(
        est.truncated,
        c_alpha * rate,
        alpha,
        IcMethod::SparseIc,
        Some(k),
        source,
    ))
}

/// Chi-square upper-tail threshold `trace + 2 frob sqrt(t) + 2 op_norm t`
/// for the quadratic form `Z' A Z`: the probability of exceeding it is at
/// most `e^{-t}`.
pub fn chi2_tail_bound(trace: f64, frob: f64, op_norm: f64, t: f64) -> f64 {
    trace + 2.0 * frob * t.sqrt() + 2.0 * op_norm * t
}

/// Specialization of [`chi2_tail_bound`] to `A = I_k`: `k + 2 sqrt(kt) + 2t`.
pub fn chi2_identity_upper(k: f64, t: f64) -> f64 {
    k + 2.0 * (k * t).sqrt() + 2.0 * t
}

/// Companion lower-tail threshold `k - 2 sqrt(kt)` for a chi-square with
/// `k` degrees of freedom: the probability of falling below it is at most
/// `e^{-t}`.
pub fn chi2_identity_lower(k: f64, t: f64) -> f64 {
    k - 2.0 * (k * t).sqrt()
}

/// Normalizing rate of the dense pivot.
fn dense_rate(n: usize, p: usize) -> f64 {
    (p as f64).sqrt() / n as f64
}

/// Normalizing rate of the sparse pivot at condition number 1.
fn sparse_rate(n: usize, p: usize, k: usize) -> f64 {
    let nf = n as f64;
    nf.powf(-0.5) + k as f64 * (p as f64).ln() / nf
}

/// Reference signal levels for width calibration. The null is the widest
/// setting for the dense pivot; intermediate levels are the hardest for the
/// sparse pivot (weak per-coordinate signal inflates selection error), so
/// the grid spans both.
const REFERENCE_ETAS: [f64; 4] = [0.0, 0.3, 0.5, 0.7];

/// Calibrates the dense width constant: the maximum across reference
/// settings (identity covariance, eta over [`REFERENCE_ETAS`]) of the
/// per-setting `(1-alpha)`-quantile of
/// `|eta_dense_truncated - eta| n / sqrt(p)`. Deterministic in `seed`.
pub fn calibrate_c_alpha_dense(
    n: usize,
    p: usize,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_calibration_size(n, p, replicates)?;
    let rate = dense_rate(n, p);
    let mut c = 0.0_f64;
    for (s, &eta_ref) in REFERENCE_ETAS.iter().enumerate() {
        let truth = reference_truth(p, eta_ref, seed ^ (0x5851_f42d * (s as u64 + 1)))?;
        let pivots: Vec<Result<f64>> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let data = sample_dataset(&truth, n, stream_seed(seed, s as u64, r))?;
                let est = eta_dense(&data, OmegaRef::Identity)?;
                Ok((est.truncated - truth.true_eta()).abs() / rate)
            })
            .collect();
        c = c.max(quantile_of(pivots, alpha)?);
    }
    Ok(c)
}

/// Calibrates the sparse width constant over the same reference etas with a
/// `k`-sparse truth, normalizing by the sparse rate at condition number 1.
pub fn calibrate_c_alpha_sparse(
    n: usize,
    p: usize,
    k: usize,
    alpha: f64,
    replicates: usize,
    seed: u64,
    sl_params: &SqrtLassoParams,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_calibration_size(n, p, replicates)?;
    if k == 0 || k > p {
        return Err(Error::parameter(format!(
            "assumed sparsity must satisfy 1 <= k <= p, got k={k}, p={p}"
        )));
    }
    let rate = sparse_rate(n, p, k);
    let mut c = 0.0_f64;
    for (s, &eta_ref) in REFERENCE_ETAS.iter().enumerate() {
        let truth = if eta_ref == 0.0 {
            reference_truth(p, 0.0, 0)?
        } else {
            let spec = BetaSpec {
                kind: BetaKind::SparseEqualMagnitude {
                    k,
                    target_eta: eta_ref,
                },
                seed: seed ^ (0x9e37_79b9 * (s as u64 + 1)),
            };
            calibrate_beta(&spec, &CovarianceSpec::Identity { dim: p }, 1.0)?
        };
        let pivots: Vec<Result<f64>> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let data = sample_dataset(&truth, n, stream_seed(seed, 16 + s as u64, r))?;
                let (est, _) = eta_sqrt_lasso(&data, sl_params)?;
                Ok((est.truncated - truth.true_eta()).abs() / rate)
            })
            .collect();
        c = c.max(quantile_of(pivots, alpha)?);
    }
    Ok(c)
}

fn check_calibration_size(n: usize, p: usize, replicates: usize) -> Result<()> {
    if n < 2 || p < 2 {
        return Err(Error::parameter(format!(
            "calibration needs n >= 2 and p >= 2, got n={n}, p={p}"
        )));
    }
    if replicates < 100 {
        return Err(Error::parameter(format!(
            "calibration needs at least 100 replicates, got {replicates}"
        )));
    }
    Ok(())
}

fn reference_truth(p: usize, eta: f64, beta_seed: u64) -> Result<GroundTruth> {
    if eta == 0.0 {
        GroundTruth::new(
            nalgebra::DVector::zeros(p),
            1.0,
            nalgebra::DMatrix::identity(p, p),
        )
    } else {
        let spec = BetaSpec {
            kind: BetaKind::DenseGaussian { target_eta: eta },
            seed: beta_seed,
        };
        calibrate_beta(&spec, &CovarianceSpec::Identity { dim: p }, 1.0)
    }
}

/// Disjoint per-(setting, replicate) seed streams.
fn stream_seed(seed: u64, setting: u64, r: u64) -> u64 {
    seed.wrapping_add(setting.wrapping_mul(0x0100_0000_0000))
        .wrapping_add(r)
}

fn quantile_of(pivots: Vec<Result<f64>>, alpha: f64) -> Result<f64> {
    let mut values = Vec::with_capacity(pivots.len());
    for v in pivots {
        values.push(v?);
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let idx = (((1.0 - alpha) * values.len() as f64).ceil() as usize)
        .clamp(1, values.len())
        - 1;
    Ok(values[idx])
}

/// Cache of calibrated width constants, keyed by the full calibration
/// configuration. Safe for concurrent readers; single writer on misses.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    inner: RwLock<BTreeMap<CacheKey, f64>>,
}

/// (method, n, p, k, alpha bits, replicates, seed, lambda0 bits)
type CacheKey = (IcMethod, usize, usize, usize, u64, usize, u64, u64);

impl CalibrationCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached dense constant for the given configuration.
    pub fn dense(
        &self,
        n: usize,
        p: usize,
        alpha: f64,
        replicates: usize,
        seed: u64,
    ) -> Result<f64> {
        let key = (
            IcMethod::DenseIc,
            n,
            p,
            0,
            alpha.to_bits(),
            replicates,
            seed,
            0,
        );
        if let Some(c) = self.inner.read().expect("calibration cache poisoned").get(&key) {
            return Ok(*c);
        }
        let c = calibrate_c_alpha_dense(n, p, alpha, replicates, seed)?;
        self.inner
            .write()
            .expect("calibration cache poisoned")
            .insert(key, c);
        Ok(c)
    }

    /// Cached sparse constant for the given configuration.
    pub fn sparse(
        &self,
        n: usize,
        p: usize,
        k: usize,
        alpha: f64,
        replicates: usize,
        seed: u64,
        sl_params: &SqrtLassoParams,
    ) -> Result<f64> {
        let lambda_bits = sl_params
            .lambda0
            .unwrap_or(crate::sqrt_lasso::default_lambda0(p))
            .to_bits();
        let key = (
            IcMethod::SparseIc,
            n,
            p,
            k,
            alpha.to_bits(),
            replicates,
            seed,
            lambda_bits,
        );
        if let Some(c) = self.inner.read().expect("calibration cache poisoned").get(&key) {
            return Ok(*c);
        }
        let c = calibrate_c_alpha_sparse(n, p, k, alpha, replicates, seed, sl_params)?;
        self.inner
            .write()
            .expect("calibration cache poisoned")
            .insert(key, c);
        Ok(c)
    }
}
