//! End-to-end runs of the `vcarm` binary.

use std::path::Path;
use std::process::{Command, Output};

fn vcarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcarm")).args(args).output().expect("spawn vcarm")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    ok(&vcarm(&[
        "simulate",
        "--seed",
        seed,
        "--n-control",
        "200",
        "--n-treated",
        "100",
        "--out",
        dir.to_str().unwrap(),
    ]));
}

#[test]
fn simulate_writes_cohort_and_potential_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "3");
    simulate(&b, "3");
    for f in ["schema.toml", "cohort.csv", "potential_outcomes.csv"] {
        let text = std::fs::read_to_string(a.join(f)).unwrap();
        assert_eq!(text, std::fs::read_to_string(b.join(f)).unwrap(), "{f}");
    }
    let rows = std::fs::read_to_string(a.join("cohort.csv")).unwrap().lines().count();
    assert_eq!(rows, 301);
}

#[test]
fn psm_reports_an_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "4");
    let schema = tmp.path().join("schema.toml");
    let cohort = tmp.path().join("cohort.csv");
    let stdout = ok(&vcarm(&[
        "psm",
        "--seed",
        "5",
        "--schema",
        schema.to_str().unwrap(),
        "--cohort",
        cohort.to_str().unwrap(),
        "--outcome",
        "sfcr",
        "--covariates",
        "age,pcdai_start,perianal,combo_im",
        "--n-boot",
        "200",
        "--n-trees",
        "10",
    ]));
    let doc: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let or = doc["estimate"]["or"].as_f64().unwrap();
    assert!(or.is_finite() && or > 0.0);
}

#[test]
fn report_renders_rows_in_each_format() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = tmp.path().join("report_rows.json");
    let row = serde_json::json!([{
        "outcome": "sfcr",
        "learner": "LR",
        "generator": null,
        "baseline": { "auc": 0.614, "ici": 0.1 },
        "augmented": null,
        "reference_or": null,
        "baseline_or": { "or": 1.26, "ci_low": 0.84, "ci_high": 2.31 },
        "augmented_or": null
    }]);
    std::fs::write(&rows, row.to_string()).unwrap();
    let md = ok(&vcarm(&["report", rows.to_str().unwrap()]));
    assert!(md.contains("| LR |"), "{md}");
    assert!(md.contains("0.61/0.10") && md.contains("1.3 (0.8, 2.3)"), "{md}");
    let csv = ok(&vcarm(&["report", rows.to_str().unwrap(), "--format", "csv"]));
    assert_eq!(csv.lines().count(), 2, "{csv}");
    let other = vcarm(&["report", rows.to_str().unwrap(), "--outcome", "crp_sfcr"]);
    assert!(!other.status.success());
    assert!(String::from_utf8_lossy(&other.stderr).contains("no rows"));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let out = vcarm(&["simulate", "--n", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    let out = vcarm(&["report", "/nonexistent/rows.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
