//! End-to-end tests of the `redrank` binary: file formats, exit codes and
//! reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use redrank_core::io::parse_matrix_csv;
use redrank_core::rsc::rsc_fit;
use redrank_core::DenseMatrix;

fn redrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redrank"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn redrank")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn write_instance(dir: &Path) -> (DenseMatrix, DenseMatrix) {
    // Small deterministic instance: Y has a strong rank-1 signal.
    let x = DenseMatrix::from_row_slice(
        4,
        2,
        &[1.0, 0.5, -0.3, 1.2, 0.8, -0.7, 0.1, 0.9],
    );
    let a = DenseMatrix::from_row_slice(2, 3, &[4.0, 2.0, 0.0, 0.0, 2.0, 4.0]);
    let y = &x * &a + DenseMatrix::from_row_slice(4, 3, &[0.1, -0.05, 0.02, 0.0, 0.03, -0.1, 0.05, 0.01, -0.02, 0.04, 0.02, 0.0]);
    fs::write(dir.join("x.csv"), redrank_core::io::format_matrix_csv(&x)).unwrap();
    fs::write(dir.join("y.csv"), redrank_core::io::format_matrix_csv(&y)).unwrap();
    (x, y)
}

#[test]
fn fit_rsc_round_trips_coefficients_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_instance(dir.path());
    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "rsc", "--mu", "1.5", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));

    let written = parse_matrix_csv(&fs::read_to_string(dir.path().join("out/coefficients.csv")).unwrap()).unwrap();
    let expected = rsc_fit(&x, &y, 1.5).unwrap().coefficients;
    assert_eq!(written, expected, "CSV round trip must be exact");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "rsc");
    assert_eq!(report["mu"], 1.5);
    assert!(report["selected_rank"].as_u64().is_some());
    assert!(report["eigenvalues"].as_array().is_some());
}

#[test]
fn fit_adaptive_reports_penalty_and_noise_estimate() {
    let dir = tempfile::tempdir().unwrap();
    write_instance(dir.path());
    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "rsc-adaptive", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "rsc-adaptive");
    let s2 = report["s2"].as_f64().expect("s2 present");
    let mu = report["mu"].as_f64().expect("mu present");
    // mu = 2 S^2 (n + q) with n = 3, q = 2.
    assert!((mu - 2.0 * s2 * 5.0).abs() <= 1e-12 * mu.max(1.0));
}

#[test]
fn fit_zero_response_selects_empty_model() {
    let dir = tempfile::tempdir().unwrap();
    write_instance(dir.path());
    fs::write(dir.path().join("zero.csv"), "0,0\n0,0\n0,0\n0,0\n").unwrap();
    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "zero.csv", "--method", "rsc", "--mu", "1.0", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["selected_rank"], 0);
    let coefficients = parse_matrix_csv(&fs::read_to_string(dir.path().join("out/coefficients.csv")).unwrap()).unwrap();
    assert_eq!(coefficients, DenseMatrix::zeros(2, 2));
}

#[test]
fn fit_nnp_and_calibrated() {
    let dir = tempfile::tempdir().unwrap();
    write_instance(dir.path());
    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "nnp", "--tau", "0.5", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    assert!(report["kkt_residual"].as_f64().unwrap() <= 1e-4);

    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "nnp-calibrated", "--tau", "0.5", "--out", "cal"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cal/report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "nnp-calibrated");
    assert!(report["selected_rank"].as_u64().unwrap() <= 2);
}

#[test]
fn fit_nnp_tau_zero_warns_and_proceeds() {
    let dir = tempfile::tempdir().unwrap();
    write_instance(dir.path());
    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "nnp", "--tau", "0", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    assert!(stderr_of(&output).contains("degenerate"));
}

#[test]
fn malformed_csv_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.csv"), "1.0,2.0\n3.0,bad\n").unwrap();
    fs::write(dir.path().join("y.csv"), "1.0\n2.0\n").unwrap();
    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "rsc", "--mu", "1.0"],
    );
    assert_eq!(output.status.code(), Some(2));
    let err = stderr_of(&output);
    assert!(err.contains("line 2") && err.contains("column 2"), "stderr: {err}");
}

#[test]
fn dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.csv"), "1.0,2.0\n3.0,4.0\n").unwrap();
    fs::write(dir.path().join("y.csv"), "1.0\n2.0\n3.0\n").unwrap();
    let output = redrank(
        dir.path(),
        &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "rsc", "--mu", "1.0"],
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("dimension mismatch"));
}

#[test]
fn missing_penalty_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_instance(dir.path());
    let output = redrank(dir.path(), &["fit", "--x", "x.csv", "--y", "y.csv", "--method", "rsc"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("--mu"));
}

fn tiny_study_json() -> &'static str {
    r#"{
        "experiment": "exp1",
        "m": 30, "p": 6, "n": 6, "r": 2,
        "rho": [0.1], "b": [0.5],
        "replications": 3, "seed": 11,
        "validation_multiplier": 2, "trim": 0.0, "grid_points": 8
    }"#
}

#[test]
fn simulate_writes_summary_and_details() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("study.json"), tiny_study_json()).unwrap();
    let output = redrank(
        dir.path(),
        &["simulate", "--config", "study.json", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("resolved seed: 11"));

    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[0].starts_with("experiment,m,p,n,r,q,rho,b,sigma,seed,estimator"));
    assert_eq!(lines.len(), 1 + 4, "one row per estimator");
    let details = fs::read_to_string(dir.path().join("out/details.csv")).unwrap();
    assert_eq!(details.lines().count(), 1 + 4 * 3);
}

#[test]
fn simulate_is_reproducible_and_seed_overridable() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("study.json"), tiny_study_json()).unwrap();
    let run = |out: &str, seed: Option<&str>| {
        let mut args = vec!["simulate", "--config", "study.json", "--out", out];
        if let Some(s) = seed {
            args.extend_from_slice(&["--seed", s]);
        }
        let output = redrank(dir.path(), &args);
        assert!(output.status.success(), "{}", stderr_of(&output));
    };
    run("a", None);
    run("b", None);
    run("c", Some("99"));
    let a = fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/summary.csv")).unwrap();
    let c = fs::read_to_string(dir.path().join("c/summary.csv")).unwrap();
    assert_eq!(a, b, "same seed must give identical bytes");
    assert_ne!(a, c, "different seed must change the draws");
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path()
            .join("bad.json"),
        r#"{"experiment":"exp1","m":5,"p":6,"n":6,"r":2,"rho":[0.1],"b":[0.5],"seed":1}"#,
    )
    .unwrap();
    let output = redrank(dir.path(), &["simulate", "--config", "bad.json"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("m > p"));
}

#[test]
fn path_writes_both_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("scenario.json"),
        r#"{
            "experiment": "exp1",
            "m": 30, "p": 6, "n": 6, "r": 2,
            "rho": 0.1, "b": 0.5,
            "seed": 5, "validation_multiplier": 2, "grid_points": 10
        }"#,
    )
    .unwrap();
    let output = redrank(dir.path(), &["path", "--config", "scenario.json", "--out", "out"]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let rsc = fs::read_to_string(dir.path().join("out/rsc_path.csv")).unwrap();
    assert_eq!(rsc.lines().count(), 1 + 10);
    // Selected rank is nonincreasing down the grid.
    let ranks: Vec<i64> = rsc
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(ranks.windows(2).all(|w| w[0] >= w[1]));
    let nnp = fs::read_to_string(dir.path().join("out/nnp_path.csv")).unwrap();
    assert_eq!(nnp.lines().count(), 1 + 10);
}

#[test]
fn tightness_emits_requested_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let output = redrank(
        dir.path(),
        &["tightness", "--runs", "3", "--seed", "3", "--grid-points", "25", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("resolved seed: 3"));
    let csv = fs::read_to_string(dir.path().join("out/tightness.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/tightness_report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"], 3);
}

#[test]
fn bounds_projected_noise_passes_at_small_size() {
    let dir = tempfile::tempdir().unwrap();
    let output = redrank(
        dir.path(),
        &["bounds", "--check", "projected-noise", "--trials", "200", "--seed", "2", "--out", "out"],
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("resolved seed: 2"));
    assert!(stdout.contains("projected_noise/mean"));
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/bound_reports.json")).unwrap()).unwrap();
    let all = reports.as_array().unwrap();
    assert_eq!(all.len(), 3);
    assert!(all.iter().all(|r| r["pass"] == true), "{stdout}");
}
