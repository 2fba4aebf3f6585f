//! End-to-end tests of the binary: subcommand wiring, file formats, and
//! exit codes (0 success, 1 check failure, 2 usage/IO error).

use std::path::Path;
use std::process::{Command, Output};

fn fdvf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdvf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn emit_bandit(dir: &Path) {
    let out = fdvf(dir, &["--out-dir", ".", "verify", "--fixtures", "bandit", "--emit-fixtures"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("bandit-model.json").exists());
    assert!(dir.join("bandit-pie.json").exists());
    assert!(dir.join("bandit-pib.json").exists());
}

#[test]
fn verify_emits_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    emit_bandit(dir.path());
    let csv = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("check,fixture,step,outcome,residual,tolerance"));
    assert!(csv.lines().count() > 10);
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn validate_accepts_good_and_flags_bad_models() {
    let dir = tempfile::tempdir().unwrap();
    emit_bandit(dir.path());
    let ok = fdvf(dir.path(), &["validate", "--model", "bandit-model.json", "--pie", "bandit-pie.json", "--pib", "bandit-pib.json"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));

    // Corrupt a reward to zero: structural validation must fail with code 1.
    let text = std::fs::read_to_string(dir.path().join("bandit-model.json")).unwrap();
    let bad = text.replace("0.2", "0.0");
    std::fs::write(dir.path().join("bad-model.json"), bad).unwrap();
    let fail = fdvf(dir.path(), &["validate", "--model", "bad-model.json"]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(stdout(&fail).contains("reward_positivity"));

    // Missing file is a usage/IO error.
    let missing = fdvf(dir.path(), &["validate", "--model", "nope.json"]);
    assert_eq!(missing.status.code(), Some(2));

    // Unknown arguments come back as exit 2 from the parser.
    let usage = fdvf(dir.path(), &["validate", "--frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn exact_reports_values_and_dumps_algebra() {
    let dir = tempfile::tempdir().unwrap();
    emit_bandit(dir.path());
    let out = fdvf(
        dir.path(),
        &["exact", "--model", "bandit-model.json", "--pie", "bandit-pie.json", "--pib", "bandit-pib.json", "--dump-algebra"],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("J(pi_e) = 8.0000000000000004e-1"), "{text}");
    assert!(text.contains("J(pi_b) = 5.0000000000000000e-1"), "{text}");
    let algebra: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("algebra.json")).unwrap()).unwrap();
    assert_eq!(algebra["steps"][0]["z"], serde_json::json!([0.5, 0.5]));
}

#[test]
fn coverage_and_construct_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    emit_bandit(dir.path());
    let cov = fdvf(
        dir.path(),
        &["coverage", "--model", "bandit-model.json", "--pie", "bandit-pie.json", "--pib", "bandit-pib.json"],
    );
    assert_eq!(cov.status.code(), Some(0), "{}", String::from_utf8_lossy(&cov.stderr));
    let csv = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2); // header + one step
    assert!(csv.lines().next().unwrap().starts_with("step,c_mu,max_mu"));

    let con = fdvf(
        dir.path(),
        &["construct", "--model", "bandit-model.json", "--pie", "bandit-pie.json", "--pib", "bandit-pib.json"],
    );
    assert_eq!(con.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("constructions.json")).unwrap()).unwrap();
    let entries = report["constructions"].as_array().unwrap();
    assert_eq!(entries.len(), 5);
    for entry in entries {
        assert!(entry["residual"].as_f64().unwrap() < 1e-8);
    }
}

#[test]
fn simulate_estimate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    emit_bandit(dir.path());
    let sim = fdvf(
        dir.path(),
        &["--seed", "5", "simulate", "--model", "bandit-model.json", "--policy", "bandit-pib.json", "--n", "4000", "--out", "data.jsonl"],
    );
    assert_eq!(sim.status.code(), Some(0));
    // Deterministic bytes for the same seed.
    let sim2 = fdvf(
        dir.path(),
        &["--seed", "5", "simulate", "--model", "bandit-model.json", "--policy", "bandit-pib.json", "--n", "4000", "--out", "data2.jsonl"],
    );
    assert_eq!(sim2.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("data.jsonl")).unwrap(),
        std::fs::read(dir.path().join("data2.jsonl")).unwrap()
    );

    for method in ["plugin", "minimax", "mis", "is", "pd-is"] {
        let est = fdvf(
            dir.path(),
            &[
                "estimate",
                "--dataset", "data.jsonl",
                "--model", "bandit-model.json",
                "--pie", "bandit-pie.json",
                "--pib", "bandit-pib.json",
                "--method", method,
                "--out", &format!("report-{method}.json"),
            ],
        );
        assert_eq!(est.status.code(), Some(0), "{method}: {}", String::from_utf8_lossy(&est.stderr));
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("report-{method}.json"))).unwrap())
                .unwrap();
        let estimate = report["estimate"].as_f64().unwrap();
        assert!((estimate - 0.8).abs() < 0.15, "{method} estimate {estimate}");
    }

    // A dataset from another model is refused.
    let other = fdvf(dir.path(), &["--out-dir", "other", "verify", "--fixtures", "chain", "--emit-fixtures"]);
    assert!(other.status.success());
    let mismatch = fdvf(
        dir.path(),
        &[
            "estimate",
            "--dataset", "data.jsonl",
            "--model", "other/chain-model.json",
            "--pie", "other/chain-pie.json",
            "--pib", "other/chain-pib.json",
            "--method", "is",
            "--out", "never.json",
        ],
    );
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("fingerprint"));
}

#[test]
fn study_runs_from_config_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "fixture": "bandit",
        "n_grid": [100, 400],
        "seed_count": 10,
        "estimators": ["plugin", "is", "minimax"],
        "root_seed": 3
    }"#;
    std::fs::write(dir.path().join("study.json.in"), config).unwrap();
    let run1 = fdvf(dir.path(), &["--out-dir", "a", "study", "--config", "study.json.in"]);
    assert_eq!(run1.status.code(), Some(0), "{}", String::from_utf8_lossy(&run1.stderr));
    let run2 = fdvf(dir.path(), &["--out-dir", "b", "study", "--config", "study.json.in"]);
    assert_eq!(run2.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("a/study.csv")).unwrap(),
        std::fs::read(dir.path().join("b/study.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("a/study.json")).unwrap(),
        std::fs::read(dir.path().join("b/study.json")).unwrap()
    );
    let csv = std::fs::read_to_string(dir.path().join("a/study.csv")).unwrap();
    assert!(csv.starts_with("fixture,estimator,n,seed_count,mean,rmse,slope,bound_thm2,bound_thm3"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}
