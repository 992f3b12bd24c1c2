use std::path::PathBuf;

use driftdeploy::deployment::Strategy;
use driftdeploy::harness::{load_reports, run_batch, run_experiment, skill_table, write_bundle, ExperimentConfig};
use driftdeploy::validate::{tiny_realtime_config, tiny_reanalysis_config};
use serde_json::Value;

#[test]
fn no_new_drifters_reports_only_the_baseline() {
    for mut cfg in [tiny_realtime_config(), tiny_reanalysis_config()] {
        cfg.l2 = 0;
        let out = run_experiment(&cfg, 0).unwrap();
        let r = &out.report;
        assert!(r.baseline.total > 0.0);
        assert!(r.strategies.is_empty() && r.random_trials.is_empty() && r.brute_force.is_none());
        assert!(out.artifacts.cost_map.is_none());
        if let Some(single) = &r.single_realization {
            assert!(single.strategies.is_empty() && single.random_trials.is_empty());
        }
    }
}

#[test]
fn fixed_seed_reports_are_byte_identical() {
    for cfg in [tiny_realtime_config(), tiny_reanalysis_config()] {
        let a = run_experiment(&cfg, 1).unwrap().report.to_json();
        let b = run_experiment(&cfg, 1).unwrap().report.to_json();
        assert_eq!(a, b);
        let c = run_experiment(&cfg, 0).unwrap().report.to_json();
        assert_ne!(a, c);
    }
}

#[test]
fn single_member_ensemble_gain_is_that_member() {
    let mut cfg = tiny_realtime_config();
    cfg.ensemble = 1;
    let r = run_experiment(&cfg, 0).unwrap().report;
    for e in r.strategies.iter().chain(&r.random_trials) {
        assert_eq!(e.per_realization.len(), 1);
        assert_eq!(e.gain.total, e.per_realization[0].total);
    }
    assert_eq!(r.baseline.total, r.baseline_per_realization[0].total);
}

#[test]
fn runs_are_clean_and_ordered_sensibly() {
    for cfg in [tiny_realtime_config(), tiny_reanalysis_config()] {
        let out = run_experiment(&cfg, 0).unwrap();
        let r = &out.report;
        assert_eq!(r.invariants.violations(), 0);
        assert!(r.invariants.psd_checks > 0 && r.invariants.plan_checks > 0);
        let proposed = r.strategy(Strategy::SurrogateAllAtOnce).unwrap();
        assert_eq!(proposed.plan.positions.len(), cfg.l2);
        assert!(proposed.gain.total >= r.baseline.total);
        assert_eq!(r.random_gains(true).len(), cfg.random_with_distance);
        assert_eq!(r.random_gains(false).len(), cfg.random_without_distance);
        assert!(out.timing.seconds("surrogate_map").is_some());
    }
}

#[test]
fn brute_force_rounds_are_timed_and_kept() {
    let mut cfg = tiny_reanalysis_config();
    cfg.brute_force_grid = Some(3);
    cfg.l2 = 1;
    let out = run_experiment(&cfg, 0).unwrap();
    let bf = out.report.brute_force.as_ref().unwrap();
    assert_eq!(bf.plan.positions.len(), 1);
    assert_eq!(out.artifacts.brute_force_rounds.len(), 1);
    assert!(out.timing.seconds("brute_force_round").unwrap() > 0.0);
    let best = out.artifacts.brute_force_rounds[0].argmax().unwrap().1;
    assert!((bf.gain.total - best).abs() < 1e-12 * best.max(1.0));
}

#[test]
fn bundles_round_trip_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_realtime_config();
    let mut cfg = ExperimentConfig { n_experiments: 2, ..cfg };
    cfg.out = Some(dir.path().to_path_buf());
    let reports = run_batch(&cfg, |out| {
        write_bundle(&dir.path().join(format!("experiment_{:03}", out.report.experiment)), out)
    })
    .unwrap();
    for name in ["report.json", "timing.json", "gains.csv", "cost_map.csv", "trajectories.csv", "deployed.csv"] {
        assert!(dir.path().join("experiment_000").join(name).is_file(), "{name}");
    }
    let loaded = load_reports(dir.path()).unwrap();
    assert_eq!(loaded, reports);
    let table = skill_table(&loaded, &[5.0, 50.0, 95.0]).unwrap();
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().starts_with("percentile"));
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/realtime_tiny.json")
}

fn assert_close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{path}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}: length");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_close(u, v, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}: keys");
            for (k, u) in x {
                assert_close(u, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

/// Regression of a pinned-seed real-time run; set `UPDATE_GOLDEN=1` to
/// regenerate after an intended change.
#[test]
fn realtime_run_matches_golden_report() {
    let report = run_experiment(&tiny_realtime_config(), 0).unwrap().report;
    let current: Value = serde_json::from_str(&report.to_json()).unwrap();
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, report.to_json() + "\n").unwrap();
    }
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_close(&current, &golden, "report");
}
