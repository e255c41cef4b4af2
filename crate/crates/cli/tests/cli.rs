//! End-to-end tests of the `penkf` binary: exit codes, file outputs, and
//! byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn penkf_bin() -> &'static str {
    env!("CARGO_BIN_EXE_penkf")
}

fn run(args: &[&str]) -> Output {
    Command::new(penkf_bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("penkf-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

const SMALL_CONFIG: &str = r#"{
    "model": {"kind": "linear", "n": 3, "m": 2},
    "algorithms": ["kf", "penkf"],
    "steps": 12,
    "repeats": 2,
    "master_seed": 99
}"#;

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = temp_dir("run");
    let config = write_config(&dir, "cfg.json", SMALL_CONFIG);
    let out = dir.join("results.csv");
    let output = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "repeat,step,algorithm,metric,value,diverged"
    );
    // 2 repeats x 12 steps x 2 algorithms x 5 default metrics.
    assert_eq!(csv.lines().count(), 1 + 2 * 12 * 2 * 5);

    let sidecar = std::fs::read_to_string(dir.join("results.csv.meta.json")).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&sidecar).unwrap();
    assert_eq!(meta["master_seed"], 99);
    assert_eq!(meta["config"]["ensemble_n"], 6);
}

#[test]
fn same_seed_gives_identical_bytes_and_overrides_apply() {
    let dir = temp_dir("determinism");
    let config = write_config(&dir, "cfg.json", SMALL_CONFIG);
    let out_a = dir.join("a.csv");
    let out_b = dir.join("b.csv");
    for (out, threads) in [(&out_a, "1"), (&out_b, "2")] {
        let output = run(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "123",
            "--repeats",
            "3",
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(output.status.success());
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "CSV bytes differ between runs");

    // The repeat override shows up in the row count.
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 12 * 2 * 5);
}

#[test]
fn validate_prints_resolved_config() {
    let dir = temp_dir("validate");
    let config = write_config(&dir, "cfg.json", SMALL_CONFIG);
    let output = run(&["validate", "--config", config.to_str().unwrap()]);
    assert!(output.status.success());
    let resolved: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("stdout is JSON");
    assert_eq!(resolved["ensemble_n"], 6);
    assert_eq!(resolved["steps"], 12);
}

#[test]
fn config_errors_exit_2() {
    let dir = temp_dir("badcfg");
    // p-EnKF with N < n under the full pattern fails validation before any
    // simulation.
    let config = write_config(
        &dir,
        "bad.json",
        r#"{
            "model": {"kind": "linear", "n": 4, "m": 1},
            "algorithms": ["penkf"],
            "ensemble_n": 2
        }"#,
    );
    let out = dir.join("never.csv");
    let output = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.exists(), "no output file on config error");

    let output = run(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn io_errors_exit_3() {
    let dir = temp_dir("io");
    let config = write_config(&dir, "cfg.json", SMALL_CONFIG);
    let output = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        "/nonexistent-dir/results.csv",
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn variance_recovery_subcommand_writes_schema() {
    let dir = temp_dir("varrec");
    let out = dir.join("var.csv");
    let output = run(&[
        "variance-recovery",
        "--dim",
        "2",
        "--sample-sizes",
        "2,4",
        "--trials",
        "3",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dim,sample_size,trial,method,frobenius_rmse,elapsed_ms"
    );
    // One row per (sample size, trial, method).
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 2);

    // Sample sizes below the dimension are a config error.
    let output = run(&[
        "variance-recovery",
        "--dim",
        "4",
        "--sample-sizes",
        "2",
        "--trials",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}
