use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_faridge")
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("FARIDGE_THREADS", n),
        None => cmd.env_remove("FARIDGE_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn worked_matrix(dir: &Path) -> PathBuf {
    write(dir, "c.json", r#"{"p": 2, "entries": [[2, 1], [1, 2]]}"#)
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn eval_on_ridge_point_reports_log3_plus_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = worked_matrix(dir.path());
    let p = write(
        dir.path(),
        "p.json",
        r#"{"p": 2, "q": 1, "tau": [1, 1], "beta": [[1, 1]], "r": []}"#,
    );
    let out = run(&["eval", "--matrix", c.to_str().unwrap(), "--params", p.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let f = v["result"]["f"].as_f64().unwrap();
    assert!((f - (3f64.ln() + 2.0)).abs() <= 1e-12);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert!(v["timing"]["elapsed_seconds"].is_number());
    assert_eq!(v["inputs"]["matrix_contents"]["p"], 2);
}

#[test]
fn curve_csv_has_header_and_critical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = worked_matrix(dir.path());
    let csv_path = dir.path().join("curve.csv");
    let out = run(
        &[
            "curve",
            "--matrix",
            c.to_str().unwrap(),
            "--samples",
            "50",
            "--format",
            "csv",
            "--out",
            csv_path.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,beta11,beta12,tau1,tau2,f,grad_inf_norm"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 50);
    for r in &rows {
        assert_eq!(r.len(), 7);
        assert!(r[6] <= 1e-8);
        assert!((r[5] - (3f64.ln() + 2.0)).abs() <= 1e-12);
    }
}

#[test]
fn solve_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let c = worked_matrix(dir.path());
    let args = [
        "solve",
        "--matrix",
        c.to_str().unwrap(),
        "--starts",
        "20",
        "--seed",
        "7",
        "--no-timing",
    ];
    let a = run(&args, None);
    let b = run(&args, Some("1"));
    let d = run(&args, Some("3"));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, d.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["seed"], 7);
    assert!(v.get("timing").is_none());
    assert!(v["result"]["clusters"].as_array().unwrap().len() >= 2);
}

#[test]
fn validation_errors_exit_2_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let asym = write(dir.path(), "a.json", r#"{"p": 2, "entries": [[2, 1], [0.5, 2]]}"#);
    let not_pd = write(dir.path(), "n.json", r#"{"p": 2, "entries": [[1, 2], [2, 1]]}"#);
    let c = worked_matrix(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["curve", "--matrix", asym.to_str().unwrap()],
        vec!["curve", "--matrix", not_pd.to_str().unwrap()],
        vec!["curve", "--matrix", "/nonexistent/c.json"],
        vec!["curve", "--matrix", c.to_str().unwrap(), "--t", "0.1"],
        vec!["eval", "--matrix", c.to_str().unwrap()],
        vec!["solve", "--matrix", c.to_str().unwrap(), "--format", "csv"],
    ];
    for args in cases {
        let out = run(&args, None);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("faridge: "));
    }
}

#[test]
fn failed_numerical_check_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let c = worked_matrix(dir.path());
    let p = write(
        dir.path(),
        "p.json",
        r#"{"p": 2, "q": 1, "tau": [1.2, 0.9], "beta": [[0.8, 0.4]], "r": []}"#,
    );
    let out = run(
        &["build-system", "--matrix", c.to_str().unwrap(), "--params", p.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stdout_json(&out)["result"]["pass"], false);
}

#[test]
fn export_plain_matches_library_and_is_stable() {
    let a = run(&["export", "--p", "2", "--q", "1"], None);
    let b = run(&["export", "--p", "2", "--q", "1"], None);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let sys = faridge::polysys::build_symbolic_system(2, 1).unwrap();
    let expected = faridge::polysys::export_system(&sys, faridge::polysys::ExportFormat::Plain);
    assert_eq!(String::from_utf8(a.stdout).unwrap(), expected);
}

#[test]
fn witness_and_verify_decomp_pass() {
    let w = run(&["witness", "--p", "4", "--q", "2", "--samples", "5", "--no-timing"], None);
    assert_eq!(w.status.code(), Some(0));
    assert_eq!(stdout_json(&w)["result"]["points"].as_array().unwrap().len(), 5);
    let d = run(&["verify-decomp", "--no-timing"], None);
    assert_eq!(d.status.code(), Some(0));
    let v = stdout_json(&d);
    assert_eq!(v["result"]["j1"]["dimension"], 4);
    assert_eq!(v["result"]["j2"]["dimension"], 3);
}

#[test]
fn isolated_and_grad_check() {
    let dir = tempfile::tempdir().unwrap();
    let c = worked_matrix(dir.path());
    let out = run(&["isolated", "--matrix", c.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let pts = stdout_json(&out)["result"]["points"].as_array().unwrap().clone();
    assert_eq!(pts.len(), 4);
    for p in pts {
        assert!((p["f"].as_f64().unwrap() - (4f64.ln() + 2.0)).abs() <= 1e-12);
    }
    let p = write(
        dir.path(),
        "p.json",
        r#"{"p": 2, "q": 1, "tau": [1.2, 0.9], "beta": [[0.8, 0.4]], "r": []}"#,
    );
    let g = run(&["grad-check", "--matrix", c.to_str().unwrap(), "--params", p.to_str().unwrap()], None);
    assert_eq!(g.status.code(), Some(0));
}

#[test]
fn report_prints_eight_passing_rows() {
    let out = run(&["report"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 8);
}
