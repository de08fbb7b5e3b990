//! Command-line interface over the varshare estimators.
//!
//! Subcommands: `simulate` (draw a dataset from a calibrated model),
//! `estimate` (run one estimator on a dataset), `precision` (fit the
//! constrained-l1 precision matrix), `ci` (confidence interval), and
//! `bench` (Monte Carlo sweep from a JSON config).
//!
//! Exit codes: 0 success, 1 usage error, 2 data/estimation error. Results
//! go to stdout or `--out`; diagnostics go to stderr. Every randomized
//! command is reproducible: it uses `--seed`, defaulting to 0 with a
//! warning so published runs can always be replayed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use varshare::adaptive::{calibrate_c0, AdaptiveConfig, DEFAULT_CALIBRATION_QUANTILE};
use varshare::bench::{results_csv_string, run_bench, summary_json_string, BenchConfig};
use varshare::clime::{
    fit_clime_from_data, fit_clime_split, lambda_pragmatic, SplitPolicy, DEFAULT_LAMBDA_SCALE,
};
use varshare::confidence::{
    calibrate_c_alpha_dense, calibrate_c_alpha_sparse, ci_dense, ci_sparse, ConstantSource,
};
use varshare::dense::{eta_dense, OmegaRef};
use varshare::io;
use varshare::known_sigma::{eta_dense_known_sigma, eta_gauss_lasso};
use varshare::model::{Dataset, EtaEstimate};
use varshare::simulate::{calibrate_beta, sample_dataset, BetaKind, BetaSpec, CovarianceSpec};
use varshare::sqrt_lasso::{eta_sqrt_lasso, fit_sqrt_lasso, SqrtLassoParams};

#[derive(Parser)]
#[command(
    name = "varshare",
    version,
    about = "Estimators for the proportion of explained variance in \
             high-dimensional linear regression"
)]
struct Cli {
    /// Seed for every randomized step (simulation, calibration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on the worker-thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output rendering for `estimate` and `ci`.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a dataset from a model calibrated to a target explained variance.
    Simulate(SimulateArgs),
    /// Run one estimator on a dataset.
    Estimate(EstimateArgs),
    /// Fit the constrained-l1 precision matrix estimate.
    Precision(PrecisionArgs),
    /// Confidence interval around an estimate.
    Ci(CiArgs),
    /// Monte Carlo sweep driven by a JSON config.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of observations.
    #[arg(long)]
    n: usize,
    /// Number of covariates.
    #[arg(long)]
    p: usize,
    /// Sparsity of the coefficient vector; `k >= p` draws a dense pattern.
    #[arg(long)]
    k: Option<usize>,
    /// Target proportion of explained variance in [0, 1).
    #[arg(long)]
    eta: f64,
    /// Covariance family: identity | ar1:RHO | banded:BANDWIDTH:VALUE.
    #[arg(long, default_value = "identity")]
    cov: String,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Output dataset (.csv for text, anything else for the binary container).
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON sidecar with the generating ground truth.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimateMethod {
    /// Dense quadratic-form estimator.
    Dense,
    /// Square-root-Lasso estimator.
    Sl,
    /// Sparsity-adaptive combination.
    Adaptive,
    /// Known-noise-level dense estimator.
    DenseKs,
    /// Gauss-Lasso refit with known noise level.
    GlKs,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input dataset (.csv or binary container).
    #[arg(long, value_name = "FILE")]
    r#in: PathBuf,
    #[arg(long, value_enum)]
    method: EstimateMethod,
    /// Precision matrix for the dense branch: identity | file:PATH.
    #[arg(long, default_value = "identity")]
    omega: String,
    /// Square-root-Lasso penalty level (default 13 sqrt(ln p)).
    #[arg(long)]
    lambda0: Option<f64>,
    /// Square-root-Lasso convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Manual adaptive threshold constant.
    #[arg(long, conflicts_with = "calibrate")]
    c0: Option<f64>,
    /// Calibrate the adaptive threshold constant with this many replicates.
    #[arg(long, value_name = "REPLICATES")]
    calibrate: Option<usize>,
    /// Known noise standard deviation (required for dense-ks and gl-ks).
    #[arg(long)]
    sigma: Option<f64>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    /// Use every row.
    Full,
    /// Use the odd rows (even rows are reserved for estimation).
    EvenOdd,
    /// Use the trailing half (leading rows are reserved for estimation).
    FirstHalf,
}

#[derive(Args)]
struct PrecisionArgs {
    /// Input dataset (.csv or binary container).
    #[arg(long, value_name = "FILE")]
    r#in: PathBuf,
    /// Constraint level: auto | VALUE.
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Output path for the estimated matrix (binary container); a
    /// `.meta.json` sidecar records the certificate quantities.
    #[arg(long)]
    out: PathBuf,
    /// Which rows form the covariance estimate.
    #[arg(long, value_enum, default_value_t = PolicyArg::Full)]
    policy: PolicyArg,
    /// Feasibility tolerance for the column programs.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CiMethod {
    Dense,
    Sl,
}

#[derive(Args)]
struct CiArgs {
    /// Input dataset (.csv or binary container).
    #[arg(long, value_name = "FILE")]
    r#in: PathBuf,
    #[arg(long, value_enum)]
    method: CiMethod,
    /// Miscoverage level in (0, 1).
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Assumed sparsity for the sparse interval.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Covariance condition number assumed by the sparse width.
    #[arg(long, default_value_t = 1.0)]
    cond: f64,
    /// Manual width constant (skips calibration).
    #[arg(long, conflicts_with = "calibrate")]
    c: Option<f64>,
    /// Calibration replicates for the width constant.
    #[arg(long, value_name = "REPLICATES", default_value_t = 400)]
    calibrate: usize,
    /// Precision matrix for the dense estimate: identity | file:PATH.
    #[arg(long, default_value = "identity")]
    omega: String,
    /// Square-root-Lasso penalty level.
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Sweep configuration (JSON).
    #[arg(long, value_name = "FILE.json")]
    config: PathBuf,
    /// Output directory for results.csv and summary.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// A failure with its process exit code: 1 usage, 2 data/estimation.
struct Failure {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        msg: msg.into(),
    }
}

impl From<varshare::Error> for Failure {
    fn from(e: varshare::Error) -> Self {
        let code = match e {
            varshare::Error::Parameter(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| usage(format!("could not configure thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::Simulate(ref args) => simulate(&cli, args),
        Cmd::Estimate(ref args) => estimate(&cli, args),
        Cmd::Precision(ref args) => precision(args),
        Cmd::Ci(ref args) => ci(&cli, args),
        Cmd::Bench(ref args) => bench(args),
    }
}

/// The global seed; warns when the command is randomized and no seed was
/// given so every published run stays reproducible.
fn effective_seed(cli: &Cli) -> u64 {
    match cli.seed {
        Some(s) => s,
        None => {
            eprintln!("warning: no --seed given; using seed 0");
            0
        }
    }
}

fn parse_cov(spec: &str, p: usize) -> Result<CovarianceSpec, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["identity"] => Ok(CovarianceSpec::Identity { dim: p }),
        ["ar1", rho] => {
            let rho: f64 = rho
                .parse()
                .map_err(|_| usage(format!("invalid AR(1) coefficient '{rho}'")))?;
            Ok(CovarianceSpec::Ar1 { dim: p, rho })
        }
        ["banded", b, v] => {
            let bandwidth: usize = b
                .parse()
                .map_err(|_| usage(format!("invalid bandwidth '{b}'")))?;
            let offdiag: f64 = v
                .parse()
                .map_err(|_| usage(format!("invalid off-diagonal value '{v}'")))?;
            Ok(CovarianceSpec::BandedPrecision {
                dim: p,
                bandwidth,
                offdiag,
            })
        }
        _ => Err(usage(format!(
            "unknown covariance spec '{spec}' (expected identity, ar1:RHO, or banded:B:V)"
        ))),
    }
}

enum OmegaArg {
    Identity,
    Matrix(varshare::nalgebra::DMatrix<f64>),
}

impl OmegaArg {
    fn as_ref(&self) -> OmegaRef<'_> {
        match self {
            OmegaArg::Identity => OmegaRef::Identity,
            OmegaArg::Matrix(m) => OmegaRef::Matrix(m),
        }
    }
}

fn parse_omega(spec: &str) -> Result<OmegaArg, Failure> {
    if spec == "identity" {
        return Ok(OmegaArg::Identity);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let m = io::read_matrix_bin(Path::new(path))?;
        return Ok(OmegaArg::Matrix(m));
    }
    Err(usage(format!(
        "unknown --omega value '{spec}' (expected identity or file:PATH)"
    )))
}

fn sl_params(lambda0: Option<f64>, tol: Option<f64>) -> SqrtLassoParams {
    let mut params = SqrtLassoParams {
        lambda0,
        ..SqrtLassoParams::default()
    };
    if let Some(tol) = tol {
        params.tol = tol;
    }
    params
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            std::fs::write(path, content)
                .map_err(|e| Failure::from(varshare::Error::from(e)))?;
        }
        None => println!("{content}"),
    }
    Ok(())
}

/// Flattens a JSON value into `key,value` CSV lines (keys are dotted paths;
/// object keys are already sorted, so the rendering is deterministic).
fn to_csv(value: &serde_json::Value) -> String {
    fn walk(prefix: &str, v: &serde_json::Value, rows: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, child, rows);
                }
            }
            serde_json::Value::Array(items) => {
                for (i, child) in items.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), child, rows);
                }
            }
            other => rows.push((prefix.to_string(), render_scalar(other))),
        }
    }
    fn render_scalar(v: &serde_json::Value) -> String {
        match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
    let mut rows = Vec::new();
    walk("", value, &mut rows);
    let mut out = String::from("field,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

fn render(cli: &Cli, value: &serde_json::Value) -> Result<String, Failure> {
    match cli.format {
        Format::Json => serde_json::to_string_pretty(value)
            .map_err(|e| Failure::from(varshare::Error::Format(e.to_string()))),
        Format::Csv => Ok(to_csv(value)),
    }
}

fn estimate_value(est: &EtaEstimate, data: &Dataset) -> serde_json::Value {
    let mut value = serde_json::to_value(est).expect("estimate serializes");
    let obj = value.as_object_mut().expect("estimate is an object");
    obj.insert("n".into(), json!(data.n()));
    obj.insert("p".into(), json!(data.p()));
    value
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), Failure> {
    let seed = effective_seed(cli);
    if args.p == 0 || args.n == 0 {
        return Err(usage("--n and --p must be positive"));
    }
    let cov = parse_cov(&args.cov, args.p)?;
    let k = args.k.unwrap_or(args.p);
    let kind = if args.eta == 0.0 || k == 0 {
        BetaKind::DenseGaussian { target_eta: 0.0 }
    } else if k >= args.p {
        BetaKind::DenseGaussian {
            target_eta: args.eta,
        }
    } else {
        BetaKind::SparseEqualMagnitude {
            k,
            target_eta: args.eta,
        }
    };
    let truth = calibrate_beta(
        &BetaSpec {
            kind,
            // Distinct stream from the design/noise draw below.
            seed: seed ^ 0x8000_0000_0000_0000,
        },
        &cov,
        args.sigma,
    )?;
    let data = sample_dataset(&truth, args.n, seed)?;
    io::write_dataset_auto(&args.out, &data)?;
    if let Some(truth_path) = &args.truth {
        io::write_ground_truth_json(truth_path, &truth)?;
    }
    eprintln!(
        "wrote {} ({} x {}, eta = {:.6})",
        args.out.display(),
        args.n,
        args.p,
        truth.true_eta()
    );
    Ok(())
}

fn estimate(cli: &Cli, args: &EstimateArgs) -> Result<(), Failure> {
    if matches!(args.method, EstimateMethod::DenseKs | EstimateMethod::GlKs)
        && args.sigma.is_none()
    {
        return Err(usage(format!(
            "--sigma is required for --method {}",
            match args.method {
                EstimateMethod::DenseKs => "dense-ks",
                _ => "gl-ks",
            }
        )));
    }
    let data = io::read_dataset_auto(&args.r#in)?;
    let value = match args.method {
        EstimateMethod::Dense => {
            let omega = parse_omega(&args.omega)?;
            let est = eta_dense(&data, omega.as_ref())?;
            estimate_value(&est, &data)
        }
        EstimateMethod::Sl => {
            let params = sl_params(args.lambda0, args.tol);
            let (est, fit) = eta_sqrt_lasso(&data, &params)?;
            let mut value = estimate_value(&est, &data);
            value.as_object_mut().unwrap().insert(
                "fit".into(),
                json!({
                    "support": fit.support,
                    "sigma_tilde": fit.sigma_tilde,
                    "lambda0": fit.lambda0,
                    "outer_iterations": fit.outer_iterations,
                    "kkt_residual": fit.kkt_residual,
                    "converged": fit.converged,
                    "objective": fit.objective,
                }),
            );
            value
        }
        EstimateMethod::Adaptive => {
            let omega = parse_omega(&args.omega)?;
            let params = sl_params(args.lambda0, args.tol);
            let cfg = match (args.c0, args.calibrate) {
                (Some(c0), _) => AdaptiveConfig::manual(c0)?,
                (None, replicates) => {
                    let replicates = replicates.unwrap_or(200);
                    let seed = effective_seed(cli);
                    calibrate_c0(
                        data.n(),
                        data.p(),
                        omega.as_ref(),
                        replicates,
                        seed,
                        DEFAULT_CALIBRATION_QUANTILE,
                    )?
                }
            };
            let (est, decision) = varshare::adaptive::eta_adaptive(
                &data,
                omega.as_ref(),
                &params,
                &cfg,
            )?;
            let mut value = estimate_value(&est, &data);
            let obj = value.as_object_mut().unwrap();
            obj.insert(
                "decision".into(),
                serde_json::to_value(decision).expect("decision serializes"),
            );
            obj.insert(
                "c0".into(),
                serde_json::to_value(&cfg).expect("config serializes"),
            );
            value
        }
        EstimateMethod::DenseKs => {
            let est = eta_dense_known_sigma(&data, args.sigma.unwrap())?;
            estimate_value(&est, &data)
        }
        EstimateMethod::GlKs => {
            let params = sl_params(args.lambda0, args.tol);
            let fit = fit_sqrt_lasso(&data, &params)?;
            let (est, gl) = eta_gauss_lasso(&data, args.sigma.unwrap(), &fit)?;
            let mut value = estimate_value(&est, &data);
            value.as_object_mut().unwrap().insert(
                "gauss_lasso".into(),
                json!({
                    "support": gl.support,
                    "projected_norm_sq": gl.projected_norm_sq,
                    "rank_deficient": gl.rank_deficient,
                }),
            );
            value
        }
    };
    emit(&args.out, &render(cli, &value)?)
}

fn precision(args: &PrecisionArgs) -> Result<(), Failure> {
    let data = io::read_dataset_auto(&args.r#in)?;
    let auto_lambda = |n_used: usize| -> Result<f64, Failure> {
        Ok(lambda_pragmatic(
            n_used,
            data.p(),
            1.0,
            DEFAULT_LAMBDA_SCALE,
        )?)
    };
    let parse_lambda = |n_used: usize| -> Result<f64, Failure> {
        if args.lambda == "auto" {
            let lam = auto_lambda(n_used)?;
            eprintln!(
                "auto constraint level {lam:.6} (unit-l1 precision class, {n_used} rows)"
            );
            Ok(lam)
        } else {
            args.lambda
                .parse::<f64>()
                .map_err(|_| usage(format!("invalid --lambda '{}'", args.lambda)))
        }
    };
    let (est, policy_label) = match args.policy {
        PolicyArg::Full => {
            let lam = parse_lambda(data.n())?;
            (fit_clime_from_data(&data, lam, args.tol)?, "full")
        }
        PolicyArg::EvenOdd => {
            let lam = parse_lambda(data.n() / 2)?;
            let (_, est) = fit_clime_split(&data, SplitPolicy::EvenOdd, lam, args.tol)?;
            (est, "even-odd")
        }
        PolicyArg::FirstHalf => {
            let lam = parse_lambda(data.n() / 2)?;
            let (_, est) = fit_clime_split(&data, SplitPolicy::FirstHalf, lam, args.tol)?;
            (est, "first-half")
        }
    };
    io::write_matrix_bin(&args.out, &est.omega_hat)?;
    let meta = json!({
        "lambda_n": est.lambda_n,
        "feasibility_gap": est.feasibility_gap,
        "symmetric": est.symmetric,
        "min_eigenvalue": est.min_eigenvalue,
        "min_abs_eigenvalue": est.min_abs_eigenvalue,
        "max_abs_eigenvalue": est.max_abs_eigenvalue,
        "sample_rows": est.sample_rows,
        "policy": policy_label,
        "p": est.omega_hat.nrows(),
        "lp_tolerance": args.tol,
        "input": args.r#in.display().to_string(),
    });
    let meta_path = PathBuf::from(format!("{}.meta.json", args.out.display()));
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta)
            .map_err(|e| Failure::from(varshare::Error::Format(e.to_string())))?,
    )
    .map_err(|e| Failure::from(varshare::Error::from(e)))?;
    eprintln!(
        "wrote {} and {} (gap {:.3e}, min |eig| {:.3e})",
        args.out.display(),
        meta_path.display(),
        est.feasibility_gap,
        est.min_abs_eigenvalue
    );
    Ok(())
}

fn ci(cli: &Cli, args: &CiArgs) -> Result<(), Failure> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let data = io::read_dataset_auto(&args.r#in)?;
    let (interval, c_used) = match args.method {
        CiMethod::Dense => {
            let omega = parse_omega(&args.omega)?;
            let est = eta_dense(&data, omega.as_ref())?;
            let (c, source) = match args.c {
                Some(c) => (c, ConstantSource::Manual),
                None => {
                    let seed = effective_seed(cli);
                    (
                        calibrate_c_alpha_dense(
                            data.n(),
                            data.p(),
                            args.alpha,
                            args.calibrate,
                            seed,
                        )?,
                        ConstantSource::Calibrated,
                    )
                }
            };
            (
                ci_dense(&est, data.n(), data.p(), args.alpha, c, source)?,
                c,
            )
        }
        CiMethod::Sl => {
            let params = sl_params(args.lambda0, None);
            let (est, _) = eta_sqrt_lasso(&data, &params)?;
            let (c, source) = match args.c {
                Some(c) => (c, ConstantSource::Manual),
                None => {
                    let seed = effective_seed(cli);
                    (
                        calibrate_c_alpha_sparse(
                            data.n(),
                            data.p(),
                            args.k,
                            args.alpha,
                            args.calibrate,
                            seed,
                            &params,
                        )?,
                        ConstantSource::Calibrated,
                    )
                }
            };
            (
                ci_sparse(
                    &est,
                    data.n(),
                    data.p(),
                    args.k,
                    args.cond,
                    args.alpha,
                    c,
                    source,
                )?,
                c,
            )
        }
    };
    let mut value = serde_json::to_value(&interval).expect("interval serializes");
    value
        .as_object_mut()
        .unwrap()
        .insert("c_alpha".into(), json!(c_used));
    emit(&args.out, &render(cli, &value)?)
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::from(varshare::Error::from(e)))?;
    let cfg: BenchConfig = serde_json::from_str(&raw).map_err(|e| {
        Failure::from(varshare::Error::Format(format!(
            "invalid bench config {}: {e}",
            args.config.display()
        )))
    })?;
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::from(varshare::Error::from(e)))?;
    let result = run_bench(&cfg)?;
    let results_path = args.out.join("results.csv");
    let summary_path = args.out.join("summary.json");
    std::fs::write(&results_path, results_csv_string(&result))
        .map_err(|e| Failure::from(varshare::Error::from(e)))?;
    std::fs::write(&summary_path, summary_json_string(&result)?)
        .map_err(|e| Failure::from(varshare::Error::from(e)))?;
    println!(
        "{}",
        json!({
            "results": results_path.display().to_string(),
            "summary": summary_path.display().to_string(),
            "rows": result.cells.len(),
        })
    );
    Ok(())
}
