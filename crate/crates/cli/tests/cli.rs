use std::path::Path;
use std::process::{Command, Output};

fn nashseek(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nashseek"))
        .args(args)
        .env_remove("NASHSEEK_THREADS")
        .output()
        .expect("spawn nashseek")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn run_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = nashseek(&["run", "--scenario", "vehicles", "--algo", "state", "--out", path_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,x_1_1,x_1_2,x_2_1,"), "{header}");
    assert!(header.ends_with(",x_10_2,err_norm,est_disagreement"), "{header}");
    let width = header.split(',').count();
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == width));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for key in ["settle_time", "lambda_hat", "r_squared", "final_residual", "diverged", "config_echo", "gain_ordering_warnings"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(summary["diverged"], false);
    assert!(summary["final_residual"].as_f64().unwrap() < 1e-2);
    assert_eq!(summary["config_echo"]["scenario"], "vehicle_formation");
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = nashseek(&["run", "--scenario", "quadratic", "--seed", "11", "--out", path_arg(d.path())]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let csv = |d: &tempfile::TempDir| std::fs::read(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    // Summaries differ only in the echoed output directory.
    let summary = |d: &tempfile::TempDir| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.path().join("summary.json")).unwrap()).unwrap();
        v["config_echo"]["output_dir"] = serde_json::Value::Null;
        v
    };
    assert_eq!(summary(&a), summary(&b));
}

#[test]
fn seed_changes_initial_conditions() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    nashseek(&["run", "--scenario", "quadratic", "--seed", "1", "--out", path_arg(a.path())]);
    nashseek(&["run", "--scenario", "quadratic", "--seed", "2", "--out", path_arg(b.path())]);
    let first = |d: &tempfile::TempDir| {
        let csv = std::fs::read_to_string(d.path().join("trajectory.csv")).unwrap();
        csv.lines().nth(1).unwrap().to_string()
    };
    assert_ne!(first(&a), first(&b));
}

#[test]
fn malformed_config_is_a_config_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"gains\": { \"alpha1\": 3,, }\n}\n").unwrap();
    let out = nashseek(&["run", "--scenario", "vehicles", "--config", path_arg(&cfg), "--out", path_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn unknown_inputs_are_config_errors() {
    for args in [
        vec!["run", "--scenario", "ships"],
        vec!["run", "--scenario", "vehicles", "--set", "gains.alpha9=1"],
        vec!["run", "--scenario", "vehicles", "--algo", "telepathy"],
        vec!["nash", "--scenario", "turbines", "--set", "epsilon=-2"],
        vec!["verify", "--only", "astrology"],
    ] {
        let out = nashseek(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn unstable_step_exits_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let out = nashseek(&["run", "--scenario", "vehicles", "--set", "dt=0.5", "--out", path_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", stdout(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], true);
}

#[test]
fn nash_reports_oracle_and_solver_agreement() {
    let out = nashseek(&["nash", "--scenario", "turbines"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let gap: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("gap"))
        .map(|v| v.trim().parse().unwrap())
        .expect("gap line");
    assert!(gap < 1e-6, "{text}");

    let out = nashseek(&["nash", "--scenario", "vehicles"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("p_i*-p_j*"));
    assert!(text.lines().any(|l| l.starts_with("10-1 ")), "{text}");
}

#[test]
fn verify_passes_and_filters_groups() {
    let out = nashseek(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));

    let out = nashseek(&["verify", "--only", "graph"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let checks: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL") || l.starts_with("NOTE")).collect();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|l| l.split_whitespace().nth(1) == Some("graph")), "{text}");
}

#[test]
fn verify_flags_a_non_monotone_market() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("negative_curvature.json");
    let mut generators = Vec::new();
    for (g1, g2, g3) in [(7.0, 36.8, -1.0), (20.0, 13.73, 0.15), (60.0, 17.14, 0.23), (15.0, 20.41, 0.1), (10.0, 15.28, 0.18), (55.0, 14.07, 0.32)] {
        generators.push(serde_json::json!({"gamma1": g1, "gamma2": g2, "gamma3": g3}));
    }
    let body = serde_json::json!({"scenario": "turbines", "params": {"generators": generators}});
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = nashseek(&["verify", "--config", path_arg(&cfg), "--only", "monotonicity"]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).lines().any(|l| l.starts_with("FAIL  monotonicity")), "{}", stdout(&out));
}

#[test]
fn sweep_with_no_values_prints_header_only() {
    let out = nashseek(&["sweep", "--scenario", "vehicles", "--param", "alpha3", "--values", ""]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "value,settle_time,lambda_hat,observer_error,final_residual,status\n");
}

#[test]
fn sweep_writes_one_row_per_value_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nashseek"))
        .args(["sweep", "--scenario", "quadratic", "--param", "alpha3", "--values", "8,5,3", "--out", path_arg(dir.path())])
        .env("NASHSEEK_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["8", "5", "3"]);
}
