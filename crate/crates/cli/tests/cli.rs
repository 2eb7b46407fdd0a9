use std::path::Path;
use std::process::{Command, Output};

fn rescon(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rescon")).args(args).env("RESCON_OUT_DIR", out).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn missing_scenario_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rescon(dir.path(), &["run", "does-not-exist.json"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_scenario_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut value: serde_json::Value = serde_json::from_str(include_str!("../presets/fig2.json")).unwrap();
    value["colour"] = serde_json::json!("blue");
    std::fs::write(&path, value.to_string()).unwrap();
    let o = rescon(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn bad_arguments_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rescon(dir.path(), &["run", "--preset", "fig99"])), 2);
    assert_eq!(code(&rescon(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&rescon(dir.path(), &["reproduce", "--criteria", "12"])), 2);
    assert_eq!(code(&rescon(dir.path(), &["--help"])), 0);
}

#[test]
fn invalid_configuration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rescon(dir.path(), &["calibrate", "--preset", "fig2", "--runs", "0"])), 3);
    assert_eq!(code(&rescon(dir.path(), &["run", "--preset", "fig2", "--dt=-1"])), 3);
    assert_eq!(code(&rescon(dir.path(), &["calibrate", "--preset", "fig3", "--runs", "1"])), 3);
}

#[test]
fn reproduce_lists_the_presets() {
    let dir = tempfile::tempdir().unwrap();
    let o = rescon(dir.path(), &["reproduce", "--list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["fig2", "fig3", "fig4", "fig6", "fig7", "fig9"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from\n{text}");
    }
}

#[test]
fn preset_run_writes_artifacts_and_reaches_consensus() {
    let dir = tempfile::tempdir().unwrap();
    let o = rescon(dir.path(), &["run", "--preset", "fig2", "--calibration-runs", "2", "--svg"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("fig2");
    for f in ["trace.csv", "summary.json", "states.csv", "kl.csv", "trust.csv", "states.svg", "kl.svg", "trust.svg"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], false);
    assert_eq!(summary["records"], 40_001);
    assert!(summary["consensus"]["all_agents_tail"].as_f64().unwrap() < 1e-3);
    let header = std::fs::read_to_string(run.join("states.csv")).unwrap();
    assert!(header.starts_with("t,x0_0,x0_1,x1_0"));
}

#[test]
fn calibration_file_feeds_a_later_run() {
    let dir = tempfile::tempdir().unwrap();
    let thresholds = dir.path().join("thr.json");
    let t = thresholds.to_str().unwrap();
    let o = rescon(dir.path(), &["calibrate", "--preset", "fig2", "--runs", "2", "--t-end", "5", "--output", t]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = rescon(dir.path(), &["run", "--preset", "fig4", "--t-end", "22", "--thresholds", t]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("fig4/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["compromised"], serde_json::json!([4]));
    assert_eq!(summary["thresholds"]["gamma_imp"].as_array().unwrap().len(), 5);
}

#[test]
fn root_attack_run_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let o = rescon(dir.path(), &["run", "--preset", "fig3", "--calibration-runs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("fig3/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], true);
    assert!(summary["divergence_time"].as_f64().unwrap() > 20.0);
}

#[test]
fn failed_criterion_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = rescon(dir.path(), &["reproduce", "--coupling", "0", "--criteria", "1"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("criterion 1 [FAIL]"));
    assert!(dir.path().join("reproduce/report.json").is_file());
}

#[test]
fn passing_criterion_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = rescon(dir.path(), &["reproduce", "--criteria", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
