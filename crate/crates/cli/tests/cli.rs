use std::path::Path;
use std::process::Command;

use driftdeploy::validate::{tiny_realtime_config, tiny_reanalysis_config};
use driftdeploy::Error;
use driftdeploy_cli::{cli_main, exit_code, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("driftdeploy").chain(args.iter().copied());
    let code = cli_main(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, name: &str, json: String) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_then_score() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_realtime_config();
    cfg.n_experiments = 2;
    let config = write_config(tmp.path(), "cfg.json", cfg.to_json());
    let out = tmp.path().join("runs");
    let (code, stdout, _) = call(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(stdout.lines().count(), 2);
    for file in ["config.json", "experiment_000/report.json", "experiment_001/gains.csv", "experiment_000/cost_map.csv"] {
        assert!(out.join(file).is_file(), "{file}");
    }

    let (code, csv, _) = call(&["score", "--in", out.to_str().unwrap(), "--percentiles", "5,25,50,75,95"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("percentile,"));
    assert!(lines[1].starts_with("5,") || lines[1].starts_with("5.0,"));

    let table_dir = tmp.path().join("tables");
    let (code, _, _) = call(&["score", "--in", out.to_str().unwrap(), "--out", table_dir.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(table_dir.join("skill_table.csv").is_file());
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "cfg.json", tiny_reanalysis_config().to_json());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(call(&["run", "--config", &config, "--out", a.to_str().unwrap(), "--experiments", "1"]).0, EXIT_OK);
    assert_eq!(call(&["run", "--config", &config, "--out", b.to_str().unwrap(), "--experiments", "1"]).0, EXIT_OK);
    assert_eq!(
        call(&["run", "--config", &config, "--out", c.to_str().unwrap(), "--experiments", "1", "--seed", "7"]).0,
        EXIT_OK
    );
    let read = |d: &Path| std::fs::read_to_string(d.join("experiment_000/report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn map_writes_a_cost_map() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "cfg.json", tiny_reanalysis_config().to_json());
    let out = tmp.path().join("map");
    let (code, stdout, _) = call(&["map", "--config", &config, "--out", out.to_str().unwrap(), "--experiment", "1"]);
    assert_eq!(code, EXIT_OK, "{stdout}");
    let csv = std::fs::read_to_string(out.join("cost_map.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 64);
    assert!(out.join("cost_map.json").is_file());
}

#[test]
fn usage_errors_exit_one() {
    let (code, _, err) = call(&["run", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("cfg.json"), "{err}");

    let (code, _, err) = call(&["run", "--config", "x.json", "--bogus"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("--bogus"));

    let (code, _, _) = call(&["frobnicate"]);
    assert_eq!(code, EXIT_USAGE);

    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.json", r#"{"scenario": "realtime"}"#.into());
    assert_eq!(call(&["run", "--config", &bad]).0, EXIT_USAGE);

    let (code, _, _) = call(&["score", "--in", tmp.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);

    let (code, out, _) = call(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("validate"));
}

#[test]
fn numerical_failures_exit_two() {
    let e = Error::NumericalFailure {
        time: 1.0,
        reason: "filter diverged".into(),
    };
    assert_eq!(exit_code(&e), EXIT_NUMERICAL);
    let wrapped = Error::Stage {
        stage: "surrogate_map",
        source: Box::new(e),
    };
    assert_eq!(exit_code(&wrapped), EXIT_NUMERICAL);
    assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USAGE);
}

#[test]
fn validate_and_preset() {
    let (code, out, _) = call(&["validate"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.lines().all(|l| l.starts_with("PASS")));
    let (code, out, _) = call(&["preset", "realtime"]);
    assert_eq!(code, EXIT_OK);
    let cfg = driftdeploy::harness::ExperimentConfig::from_json(&out).unwrap();
    assert_eq!(cfg, driftdeploy::harness::ExperimentConfig::realtime_preset());
}

#[test]
fn binary_honours_the_output_directory_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "cfg.json", tiny_realtime_config().to_json());
    let env_dir = tmp.path().join("from_env");
    let status = Command::new(env!("CARGO_BIN_EXE_driftdeploy"))
        .args(["run", "--config", &config, "--threads", "1"])
        .env("DRIFTDEPLOY_OUT", &env_dir)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(env_dir.join("experiment_000/report.json").is_file());

    let flag_dir = tmp.path().join("from_flag");
    let status = Command::new(env!("CARGO_BIN_EXE_driftdeploy"))
        .args(["run", "--config", &config, "--out", flag_dir.to_str().unwrap()])
        .env("DRIFTDEPLOY_OUT", &env_dir.join("unused"))
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(flag_dir.join("experiment_000/report.json").is_file());
    assert!(!env_dir.join("unused").exists());

    let missing = Command::new(env!("CARGO_BIN_EXE_driftdeploy"))
        .args(["run", "--config", "missing.json"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());
}
