//! Estimators available when the noise level `sigma` is known.
//!
//! Two estimators: the norm-based dense estimator
//! `1 - n sigma^2 / |Y|^2`, whose quadratic risk is of order `1/n`, and the
//! Gauss-Lasso estimator, which refits least squares on the support selected
//! by the square-root Lasso and forms
//! `(|P_J Y|^2 / n) / (sigma^2 + |P_J Y|^2 / n)` with `P_J` the orthogonal
//! projector onto the span of the selected columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Dataset, EtaEstimate, Method};
use crate::sqrt_lasso::SqrtLassoFit;

/// Support-projection summary backing the Gauss-Lasso estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLassoFit {
    /// Column indices selected by the square-root Lasso.
    pub support: Vec<usize>,
    /// Squared norm of the projection of `Y` onto the selected span.
    pub projected_norm_sq: f64,
    /// True when the selected columns are linearly dependent (the projector
    /// then uses the detected rank, i.e. a pseudo-inverse).
    pub rank_deficient: bool,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::parameter(format!(
            "known noise level must be positive and finite, got {sigma}"
        )));
    }
    Ok(())
}

/// Norm-based estimator `1 - n sigma^2 / |Y|^2` for known noise level.
///
/// A zero response makes the ratio undefined; the estimate is then 0 with a
/// `degenerate` diagnostic set.
pub fn eta_dense_known_sigma(data: &Dataset, sigma: f64) -> Result<EtaEstimate> {
    check_sigma(sigma)?;
    let n = data.n() as f64;
    let y_norm_sq = data.y_norm_sq();
    if y_norm_sq == 0.0 {
        return Ok(EtaEstimate::new(0.0, Method::KnownSigmaDense)
            .with_diagnostic("degenerate", 1.0)
            .with_diagnostic("y_norm_sq", 0.0));
    }
    let raw = 1.0 - n * sigma * sigma / y_norm_sq;
    Ok(EtaEstimate::new(raw, Method::KnownSigmaDense)
        .with_diagnostic("y_norm_sq", y_norm_sq)
        .with_diagnostic("sigma_known", sigma))
}

/// Projects `y` onto the column span of the `support` columns of `x` via a
/// column-pivoted QR with rank detection. Returns the squared norm of the
/// projection and the detected rank.
fn projected_norm_sq(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    support: &[usize],
) -> Result<(f64, usize)> {
    let p = x.ncols();
    if let Some(&bad) = support.iter().find(|&&j| j >= p) {
        return Err(Error::parameter(format!(
            "support index {bad} out of range for p={p} columns"
        )));
    }
    if support.is_empty() {
        return Ok((0.0, 0));
    }
    let xj = x.select_columns(support.iter());
    let qr = xj.col_piv_qr();
    let r = qr.r();
    let max_diag = (0..r.nrows().min(r.ncols()))
        .map(|i| r[(i, i)].abs())
        .fold(0.0, f64::max);
    let threshold = 1e-10 * max_diag;
    let mut rank = 0usize;
    for i in 0..r.nrows().min(r.ncols()) {
        // Column pivoting orders the diagonal by decreasing magnitude, so the
        // first sub-threshold entry ends the numerical rank.
        if r[(i, i)].abs() > threshold {
            rank += 1;
        } else {
            break;
        }
    }
    if rank == 0 {
        return Ok((0.0, 0));
    }
    let q = qr.q();
    let mut norm_sq = 0.0;
    for i in 0..rank {
        let coeff = q.column(i).dot(y);
        norm_sq += coeff * coeff;
    }
    Ok((norm_sq.min(y.norm_squared()), rank))
}

/// Gauss-Lasso estimator: least-squares refit on the square-root Lasso
/// support with known noise level.
pub fn eta_gauss_lasso(
    data: &Dataset,
    sigma: f64,
    fit: &SqrtLassoFit,
) -> Result<(EtaEstimate, GaussLassoFit)> {
    check_sigma(sigma)?;
    let support = fit.support.clone();
    let (proj_sq, rank) = projected_norm_sq(data.x(), data.y(), &support)?;
    let rank_deficient = rank < support.len();
    let n = data.n() as f64;
    let explained = proj_sq / n;
    let raw = explained / (sigma * sigma + explained);
    let est = EtaEstimate::new(raw, Method::GaussLassoKnownSigma)
        .with_diagnostic("support_size", support.len() as f64)
        .with_diagnostic("projection_rank", rank as f64)
        .with_diagnostic("projected_norm_sq", proj_sq)
        .with_diagnostic("sigma_known", sigma);
    Ok((
        est,
        GaussLassoFit {
            support,
            projected_norm_sq: proj_sq,
            rank_deficient,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroundTruth;
    use crate::simulate::{calibrate_beta, sample_dataset, BetaKind, BetaSpec, CovarianceSpec};
    use crate::sqrt_lasso::{fit_sqrt_lasso, practical_lambda0, SqrtLassoParams};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset_with_y(y: Vec<f64>) -> Dataset {
        let n = y.len();
        let x = DMatrix::from_fn(n, 2, |i, j| ((i + 1) * (j + 2)) as f64);
        Dataset::new(x, DVector::from_vec(y)).unwrap()
    }

    #[test]
    fn known_sigma_closed_forms() {
        // |Y|^2 = n sigma^2 gives exactly zero.
        let data = dataset_with_y(vec![2.0, 2.0, 2.0]);
        let est = eta_dense_known_sigma(&data, 2.0).unwrap();
        assert_eq!(est.raw, 0.0);

        // sigma^2 = |Y|^2 / (2n) gives exactly one half.
        let y_norm_sq: f64 = 12.0;
        let sigma = (y_norm_sq / 6.0).sqrt();
        let est = eta_dense_known_sigma(&data, sigma).unwrap();
        assert_relative_eq!(est.raw, 0.5, epsilon = 1e-12);

        // Raw value is increasing in |Y|^2 at fixed sigma.
        let lo = eta_dense_known_sigma(&dataset_with_y(vec![1.0, 1.0, 1.0]), 1.0).unwrap();
        let hi = eta_dense_known_sigma(&dataset_with_y(vec![2.0, 2.0, 2.0]), 1.0).unwrap();
        assert!(hi.raw > lo.raw);

        // Zero response flags as degenerate instead of dividing by zero.
        let est = eta_dense_known_sigma(&dataset_with_y(vec![0.0, 0.0, 0.0]), 1.0).unwrap();
        assert_eq!(est.truncated, 0.0);
        assert_eq!(est.diagnostics["degenerate"], 1.0);

        assert!(eta_dense_known_sigma(&data, 0.0).is_err());
        assert!(eta_dense_known_sigma(&data, f64::NAN).is_err());
    }

    #[test]
    fn known_sigma_null_risk_scales_like_one_over_n() {
        // Under beta* = 0 the error is 1 - n/chi2_n, so n * MSE is near 2.
        let n = 200;
        let gt = GroundTruth::new(DVector::zeros(3), 1.5, DMatrix::identity(3, 3)).unwrap();
        let mut total = 0.0;
        let reps = 500;
        for r in 0..reps {
            let data = sample_dataset(&gt, n, 9_000 + r).unwrap();
            let est = eta_dense_known_sigma(&data, 1.5).unwrap();
            total += est.truncated * est.truncated;
        }
        let n_mse = n as f64 * total / reps as f64;
        // Truncation halves the null risk (negative errors are clipped), so
        // the target is ~1; accept a generous Monte Carlo band.
        assert!(
            (0.4..2.8).contains(&n_mse),
            "n * MSE = {n_mse} outside the expected band"
        );
    }

    #[test]
    fn gauss_lasso_empty_support_is_zero() {
        let data = dataset_with_y(vec![1.0, 2.0, 3.0]);
        let fit = fit_sqrt_lasso(&data, &SqrtLassoParams::default()).unwrap();
        // The default penalty at this scale selects nothing.
        assert!(fit.support.is_empty());
        let (est, gl) = eta_gauss_lasso(&data, 1.0, &fit).unwrap();
        assert_eq!(est.raw, 0.0);
        assert_eq!(gl.projected_norm_sq, 0.0);
        assert!(!gl.rank_deficient);
    }

    #[test]
    fn gauss_lasso_full_span_reaches_the_response() {
        // More selected columns than rows: the projection is the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(3, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(3, |i, _| (i + 1) as f64);
        let data = Dataset::new(x, y).unwrap();
        let mut fit = fit_sqrt_lasso(&data, &SqrtLassoParams::default()).unwrap();
        fit.support = (0..5).collect();
        let sigma = 0.7;
        let (est, gl) = eta_gauss_lasso(&data, sigma, &fit).unwrap();
        let y_norm_sq = data.y_norm_sq();
        assert_relative_eq!(gl.projected_norm_sq, y_norm_sq, max_relative = 1e-10);
        let expect = (y_norm_sq / 3.0) / (sigma * sigma + y_norm_sq / 3.0);
        assert_relative_eq!(est.raw, expect, max_relative = 1e-10);
        assert!(gl.rank_deficient, "5 columns in R^3 must be dependent");
        assert!(est.raw < 1.0);
    }

    #[test]
    fn projection_is_idempotent_and_span_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..10 {
            let n = 20;
            let x = DMatrix::from_fn(n, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let support = vec![0, 2, 5];
            let (p1, rank) = projected_norm_sq(&x, &y, &support).unwrap();
            assert_eq!(rank, 3);

            // Idempotence: the projection of the projection has the same norm.
            // Reconstruct the projected vector explicitly from the normal
            // equations and re-project it.
            let xj = x.select_columns(support.iter());
            let coef = (xj.transpose() * &xj)
                .cholesky()
                .unwrap()
                .solve(&(xj.transpose() * &y));
            let proj = &xj * coef;
            let (p2, _) = projected_norm_sq(&x, &proj, &support).unwrap();
            assert_relative_eq!(p1, p2, max_relative = 1e-10);
            assert_relative_eq!(p1, proj.norm_squared(), max_relative = 1e-10);

            // Rescaling the support columns leaves the projection unchanged.
            let mut x_scaled = x.clone();
            for &j in &support {
                for i in 0..n {
                    x_scaled[(i, j)] *= 3.0 + trial as f64;
                }
            }
            let (p3, _) = projected_norm_sq(&x_scaled, &y, &support).unwrap();
            assert_relative_eq!(p1, p3, max_relative = 1e-10);
        }
    }

    #[test]
    fn rank_deficiency_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut x = DMatrix::from_fn(12, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        for i in 0..12 {
            x[(i, 2)] = 2.0 * x[(i, 0)];
        }
        let y = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let mut fit = fit_sqrt_lasso(&data, &SqrtLassoParams::default()).unwrap();
        fit.support = vec![0, 1, 2];
        let (_, gl) = eta_gauss_lasso(&data, 1.0, &fit).unwrap();
        assert!(gl.rank_deficient);

        fit.support = vec![0, 7];
        assert!(eta_gauss_lasso(&data, 1.0, &fit).is_err());
    }

    #[test]
    fn gauss_lasso_estimates_sparse_truth_well() {
        let n = 200;
        let p = 60;
        let cov = CovarianceSpec::Identity { dim: p };
        let spec = BetaSpec {
            kind: BetaKind::SparseEqualMagnitude {
                k: 2,
                target_eta: 0.5,
            },
            seed: 5,
        };
        let gt = calibrate_beta(&spec, &cov, 1.0).unwrap();
        let params = SqrtLassoParams {
            lambda0: Some(practical_lambda0(p)),
            ..SqrtLassoParams::default()
        };
        let mut errs = Vec::new();
        for r in 0..60 {
            let data = sample_dataset(&gt, n, 40_000 + r).unwrap();
            let fit = fit_sqrt_lasso(&data, &params).unwrap();
            let (est, _) = eta_gauss_lasso(&data, 1.0, &fit).unwrap();
            errs.push((est.truncated - gt.true_eta()).powi(2));
        }
        let rmse = (errs.iter().sum::<f64>() / errs.len() as f64).sqrt();
        // Pilot-frozen bound of order k log p / n = 0.041 for this setting.
        assert!(rmse < 0.12, "Gauss-Lasso RMSE {rmse} too large");
    }
}
