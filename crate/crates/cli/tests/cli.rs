//! End-to-end checks of the `annulus-interp` binary: exit codes, report
//! files, and rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("annulus-cli-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn run_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annulus-interp"))
        .args(args)
        .output()
        .expect("binary launches")
}

#[test]
fn kernel_check_writes_reports_and_exits_zero() {
    let dir = scratch("kernel");
    let config = write_config(&dir, r#"{"q": 0.25, "task": "kernel-check", "seed": 5}"#);
    let out_dir = dir.join("out");
    let out = run_bin(&[
        "kernel-check",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--verbose",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"status\": \"pass\""));
    let grid = fs::read_to_string(out_dir.join("kernel_grid.csv")).unwrap();
    assert!(grid.starts_with("z_re,z_im,w_re,w_im,k_re,k_im,tail_bound\n"));
    assert_eq!(grid.lines().count(), 401);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("[reciprocal-identity] pass"), "{stderr}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reruns_are_identical_after_dropping_timings() {
    let dir = scratch("rerun");
    let config = write_config(&dir, r#"{"task": "kernel-check", "seed": 9}"#);
    let out_dir = dir.join("out");
    let mut payloads = Vec::new();
    for _ in 0..2 {
        let out = run_bin(&[
            "kernel-check",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let text = fs::read_to_string(out_dir.join("report.json")).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value.as_object_mut().unwrap().remove("timings_ms");
        payloads.push(serde_json::to_string(&value).unwrap());
    }
    assert_eq!(payloads[0], payloads[1]);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_output_dir_prints_the_report_to_stdout() {
    let dir = scratch("stdout");
    let config = write_config(&dir, r#"{"task": "kernel-check"}"#);
    let out = run_bin(&["--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(value["status"], "pass");
    assert_eq!(value["config"]["task"], "kernel-check");
    assert_eq!(value["config"]["num_atoms"], 32);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn invalid_node_is_a_validation_failure() {
    let dir = scratch("invalid");
    let config = write_config(
        &dir,
        r#"{
            "task": "pick",
            "nodes": [{"re": 1.5, "im": 0.0}],
            "targets": [{"re": 0.1, "im": 0.0}]
        }"#,
    );
    let out = run_bin(&["pick", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nodes[0]"), "{stderr}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn task_override_changes_the_validation_requirements() {
    let dir = scratch("override");
    // valid as written, but pick needs nodes
    let config = write_config(&dir, r#"{"task": "kernel-check"}"#);
    let out = run_bin(&["pick", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("at least one node"), "{stderr}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn oversized_target_reports_infeasible() {
    let dir = scratch("infeasible");
    let config = write_config(
        &dir,
        r#"{
            "task": "pick",
            "nodes": [{"re": 0.5, "im": 0.1}],
            "targets": [{"re": 1.4, "im": 0.0}],
            "num_atoms": 8
        }"#,
    );
    let out = run_bin(&["--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(value["status"], "infeasible");
    assert!(value["artifacts"]["certificate"].is_object());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unreadable_config_is_an_io_error() {
    let out = run_bin(&["--config", "/definitely/not/a/file.json"]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cannot read"), "{stderr}");
}
