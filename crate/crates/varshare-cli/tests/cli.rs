//! End-to-end tests for the `varshare` binary: exit codes, output formats,
//! determinism, and the simulate -> estimate round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_varshare"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn varshare")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is not UTF-8")
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is not UTF-8")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_str(&stdout_str(out)).expect("stdout is not valid JSON")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process had no exit code")
}

/// Simulates a small dataset into `dir` and returns its path.
fn simulate_fixture(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut full: Vec<&str> = vec![
        "simulate", "--n", "120", "--p", "40", "--k", "2", "--eta", "0.4", "--seed", "7", "--out",
    ];
    let path_s = path.to_str().unwrap().to_owned();
    full.push(&path_s);
    full.extend_from_slice(args);
    let out = run(&full);
    assert_eq!(code(&out), 0, "simulate failed: {}", stderr_str(&out));
    path
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"][..], &["estimate", "--help"][..]] {
        let out = run(args);
        assert_eq!(code(&out), 0, "{args:?} exited nonzero");
    }
    assert!(stdout_str(&run(&["--help"])).contains("simulate"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["estimate", "--method", "dense", "--bogus"]);
    assert_eq!(code(&out), 1);
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate_fixture(dir.path(), "a.csv", &[]);
    let b = simulate_fixture(dir.path(), "b.csv", &[]);
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed must give identical datasets");

    let c = dir.path().join("c.csv");
    let out = run(&[
        "simulate", "--n", "120", "--p", "40", "--k", "2", "--eta", "0.4", "--seed", "8", "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(bytes_a, std::fs::read(&c).unwrap(), "different seeds must differ");
}

#[test]
fn simulate_without_seed_warns_and_uses_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let out = run(&[
        "simulate", "--n", "50", "--p", "10", "--eta", "0.3", "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(
        stderr_str(&out).contains("seed 0"),
        "expected a seed-0 warning on stderr, got: {}",
        stderr_str(&out)
    );

    let b = dir.path().join("b.csv");
    let out = run(&[
        "simulate", "--n", "50", "--p", "10", "--eta", "0.3", "--seed", "0", "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(
        !stderr_str(&out).contains("warning"),
        "explicit seed must not warn: {}",
        stderr_str(&out)
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn estimate_dense_round_trips_and_tracks_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let truth = dir.path().join("t.json");
    let out = run(&[
        "simulate", "--n", "400", "--p", "60", "--k", "60", "--eta", "0.5", "--seed", "3",
        "--out", data.to_str().unwrap(), "--truth", truth.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));

    let out = run(&["estimate", "--method", "dense", "--in", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "dense");
    assert_eq!(v["n"], 400);
    assert_eq!(v["p"], 60);
    let eta = v["truncated"].as_f64().unwrap();
    assert!((eta - 0.5).abs() < 0.2, "estimate {eta} far from target 0.5");

    // The CLI JSON is a superset of the library estimate record and must
    // deserialize back into it unchanged.
    let est: varshare::EtaEstimate = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(est.raw, v["raw"].as_f64().unwrap());
    assert_eq!(est.truncated, eta);

    // The truth sidecar reloads through the library and hits the target
    // explained variance exactly (the generator calibrates beta to it).
    let gt = varshare::io::read_ground_truth_json(&truth).unwrap();
    assert!((gt.true_eta() - 0.5).abs() < 1e-9);
}

#[test]
fn estimate_sl_happy_path_reports_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let out = run(&[
        "estimate", "--method", "sl", "--lambda0", "2.72", "--in", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "sl");
    let raw = v["raw"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&raw));
    assert!(v["fit"]["converged"].as_bool().unwrap());
    assert!(v["fit"]["kkt_residual"].as_f64().unwrap() <= 1e-6);
    assert!(v["fit"]["support"].as_array().is_some());
}

#[test]
fn estimate_adaptive_with_manual_constant() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let out = run(&[
        "estimate", "--method", "adaptive", "--c0", "0.5", "--lambda0", "2.72", "--in",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "adaptive");
    let chosen = v["decision"]["chosen"].as_str().unwrap();
    assert!(chosen == "sparse" || chosen == "dense");
    assert!(v["decision"]["threshold"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_sigma_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    for method in ["dense-ks", "gl-ks"] {
        let out = run(&["estimate", "--method", method, "--in", data.to_str().unwrap()]);
        assert_eq!(code(&out), 1, "missing --sigma must be a usage error");
        assert!(
            stderr_str(&out).contains("--sigma"),
            "stderr should name the missing flag: {}",
            stderr_str(&out)
        );
    }
}

#[test]
fn known_sigma_methods_run_with_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let out = run(&[
        "estimate", "--method", "dense-ks", "--sigma", "1.0", "--in", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "dense-ks");

    let out = run(&[
        "estimate", "--method", "gl-ks", "--sigma", "1.0", "--lambda0", "2.72", "--in",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "gl-ks");
    assert!(v["gauss_lasso"]["support"].as_array().is_some());
}

#[test]
fn corrupt_csv_is_data_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,x1,x2\n1.0,2.0,0.5\n3.0,oops,0.1\n").unwrap();
    let out = run(&["estimate", "--method", "dense", "--in", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr_str(&out).contains("line 3"),
        "stderr should name the bad line: {}",
        stderr_str(&out)
    );

    let out = run(&["estimate", "--method", "dense", "--in", "/nonexistent/x.csv"]);
    assert_eq!(code(&out), 2, "missing input file is a data error");
}

#[test]
fn csv_format_renders_flat_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let out = run(&[
        "estimate", "--method", "dense", "--format", "csv", "--in", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout_str(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("field,value"));
    assert!(text.contains("\nraw,"));
    assert!(text.contains("\ntruncated,"));
}

#[test]
fn binary_container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.bin", &[]);
    let out = run(&["estimate", "--method", "dense", "--in", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert_eq!(v["n"], 120);
    assert_eq!(v["p"], 40);

    // Same generator, CSV container: identical estimate to full precision.
    let csv = simulate_fixture(dir.path(), "d.csv", &[]);
    let out_csv = run(&["estimate", "--method", "dense", "--in", csv.to_str().unwrap()]);
    let v_csv = stdout_json(&out_csv);
    assert_eq!(v["raw"], v_csv["raw"], "containers must carry identical data");
}

#[test]
fn precision_writes_matrix_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let omega = dir.path().join("omega.bin");
    let out = run(&[
        "precision", "--in", data.to_str().unwrap(), "--lambda", "auto", "--policy", "even-odd",
        "--out", omega.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    assert!(omega.exists());

    let meta_path = dir.path().join("omega.bin.meta.json");
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(&meta_path).unwrap()).unwrap();
    assert!(meta["feasibility_gap"].as_f64().unwrap() <= 1e-8);
    assert_eq!(meta["symmetric"], true);
    assert_eq!(meta["p"], 40);
    assert_eq!(meta["policy"], "even-odd");
    assert_eq!(meta["sample_rows"].as_array().unwrap().len(), 60);

    // The written matrix feeds back into the dense estimator via file: syntax.
    let omega_arg = format!("file:{}", omega.to_str().unwrap());
    let out = run(&[
        "estimate", "--method", "dense", "--omega", &omega_arg, "--in", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert!((0.0..=1.0).contains(&v["truncated"].as_f64().unwrap()));
}

#[test]
fn precision_explicit_lambda_and_bad_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let omega = dir.path().join("omega.bin");
    let out = run(&[
        "precision", "--in", data.to_str().unwrap(), "--lambda", "0.6", "--out",
        omega.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));

    let out = run(&[
        "precision", "--in", data.to_str().unwrap(), "--lambda", "pineapple", "--out",
        omega.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "unparseable lambda is a usage error");
}

#[test]
fn ci_dense_with_manual_constant() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let out = run(&[
        "ci", "--method", "dense", "--alpha", "0.1", "--c", "2.0", "--in",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    let (lo, hi) = (v["lo"].as_f64().unwrap(), v["hi"].as_f64().unwrap());
    let center = v["center"].as_f64().unwrap();
    assert!(lo <= center && center <= hi);
    assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    assert_eq!(v["constant_source"], "manual");
    // half width = c * sqrt(p) / n with c=2, p=40, n=120
    let hw = v["half_width"].as_f64().unwrap();
    assert!((hw - 2.0 * (40.0f64).sqrt() / 120.0).abs() < 1e-12);
}

#[test]
fn ci_sl_with_manual_constant() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let out = run(&[
        "ci", "--method", "sl", "--alpha", "0.1", "--k", "2", "--c", "1.5", "--lambda0", "2.72",
        "--in", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "sparse-ic");
    assert_eq!(v["k_assumed"], 2);
    assert!(v["lo"].as_f64().unwrap() <= v["hi"].as_f64().unwrap());
}

#[test]
fn bench_runs_tiny_grid_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "grid": [
    {
      "n": 80, "p": 30, "k": 0, "eta": 0.0,
      "cov_spec": {"family": "identity", "dim": 30},
      "estimators": [{"kind": "dense"}, {"kind": "oracle"}],
      "replicates": 6,
      "series": "smoke"
    }
  ],
  "base_seed": 11,
  "output_path": "unused"
}"#,
    )
    .unwrap();
    let outdir = dir.path().join("results");
    let out = run(&[
        "bench", "--config", cfg.to_str().unwrap(), "--out", outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));

    let csv = std::fs::read_to_string(outdir.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("series,n,p,k,eta_true,estimator"));
    assert_eq!(lines.count(), 2, "one row per (cell, estimator)");
    assert!(csv.contains("smoke,80,30,0,0,oracle,6,6,0,false,0,"));

    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(outdir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["base_seed"], 11);

    // Identical reruns give byte-identical result tables.
    let outdir2 = dir.path().join("results2");
    let out = run(&[
        "bench", "--config", cfg.to_str().unwrap(), "--out", outdir2.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv2 = std::fs::read_to_string(outdir2.join("results.csv")).unwrap();
    assert_eq!(csv, csv2);
}

#[test]
fn bench_bad_config_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{not json").unwrap();
    let outdir = dir.path().join("results");
    let out = run(&[
        "bench", "--config", cfg.to_str().unwrap(), "--out", outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn out_flag_writes_file_instead_of_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let dest = dir.path().join("est.json");
    let out = run(&[
        "estimate", "--method", "dense", "--in", data.to_str().unwrap(), "--out",
        dest.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    assert!(stdout_str(&out).trim().is_empty() || !stdout_str(&out).contains("\"raw\""));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&dest).unwrap()).unwrap();
    assert_eq!(v["method"], "dense");
}

#[test]
fn threads_flag_zero_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), "d.csv", &[]);
    let out = run(&[
        "--threads", "0", "estimate", "--method", "dense", "--in", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}
