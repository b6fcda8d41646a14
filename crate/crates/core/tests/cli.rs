use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrd-adjust"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("bad json ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in [None, Some("assign"), Some("analyze"), Some("simulate"), Some("oracle"), Some("diagnose")] {
        let mut args: Vec<&str> = sub.into_iter().collect();
        args.push("--help");
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn malformed_config_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"seed\": 1,\n  \"level\": ,\n}\n").unwrap();
    let out = run(&["assign", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("column"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(&["simulate", "--bogus"]).status.code(), Some(1));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = run(&["analyze", "--data", "/nonexistent/pairs.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn analyze_sample_with_default_config() {
    let out = run(&["analyze", "--data", data("sample_pairs.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let est = v["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 3);
    for e in est {
        assert!(!e["effect"].is_null());
        let (lo, pt, hi) =
            (e["ci_low"].as_f64().unwrap(), e["point"].as_f64().unwrap(), e["ci_high"].as_f64().unwrap());
        assert!(lo <= pt && pt <= hi);
    }
    assert_eq!(v["design"]["buyers"], 12);
    assert_eq!(v["design"]["treated_sellers"], 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("opt_noninteracted"));
}

#[test]
fn analyze_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let out = run(&[
        "analyze",
        "--data",
        data("sample_pairs.csv").to_str().unwrap(),
        "--config",
        data("analyze.json").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["estimates"].as_array().unwrap().len(), 12);
    assert!(String::from_utf8_lossy(&out.stdout).contains("seller_spillover"));
}

#[test]
fn oracle_checks_pass_on_the_bundled_config() {
    let out = run(&["oracle", "--config", data("oracle.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["all_pass"], true);
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["property"].as_str().unwrap().contains("opt_interacted")));
    assert!(checks.iter().all(|c| c["pass"] == true));
}

#[test]
fn assign_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.json");
    std::fs::write(&cfg, r#"{"design": {"buyers": 6, "sellers": 4, "treated_buyers": 2}, "seed": 5}"#).unwrap();
    let a = run(&["assign", "--config", cfg.to_str().unwrap()]);
    let b = run(&["assign", "--config", cfg.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert_eq!(text.lines().filter(|l| l.starts_with("buyer,") && l.ends_with(",1")).count(), 2);
    assert_eq!(text.lines().filter(|l| l.starts_with("seller,") && l.ends_with(",1")).count(), 2);
}

#[test]
fn simulate_writes_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    std::fs::write(
        &cfg,
        r#"{"design": {"buyers": 20, "sellers": 16}, "replications": 20, "seed": 3,
            "methods": ["unadjusted", "opt_interacted"],
            "dgp": {"kind": "normal", "mu": [5, 2, 2, 1]}}"#,
    )
    .unwrap();
    let csv = dir.path().join("summary.csv");
    let reps = dir.path().join("reps.csv");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--replications-csv",
        reps.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["report"]["results"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
    assert_eq!(std::fs::read_to_string(&reps).unwrap().lines().count(), 41);
}

#[test]
fn diagnose_reports_regimes() {
    let out = run(&["diagnose", "--config", data("oracle.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("regime"));
    let out = run(&["diagnose", "--data", data("sample_pairs.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
