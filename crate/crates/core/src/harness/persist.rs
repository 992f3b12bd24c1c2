use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::report::ExperimentReport;
use super::RunOutput;
use crate::{Error, Result};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "DRIFTDEPLOY_OUT";

/// Output directory by precedence: explicit flag, then [`OUT_DIR_ENV`], then
/// the configuration, then `out`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one experiment: `report.json`, `timing.json`, `gains.csv`, the
/// cost map, trajectories and any greedy-search maps.
pub fn write_bundle(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("report.json"), &out.report)?;
    write_json(&dir.join("timing.json"), &out.timing)?;
    write_gains(&dir.join("gains.csv"), &out.report)?;
    let a = &out.artifacts;
    if let Some(map) = &a.cost_map {
        map.write_csv(create(&dir.join("cost_map.csv"))?)?;
        write_json(&dir.join("cost_map.json"), &map.manifest())?;
    }
    a.existing.write_csv(create(&dir.join("trajectories.csv"))?)?;
    write_json(&dir.join("trajectories.json"), &a.existing.manifest())?;
    if let Some(d) = &a.deployed {
        d.write_csv(create(&dir.join("deployed.csv"))?)?;
        write_json(&dir.join("deployed.json"), &d.manifest())?;
    }
    for (r, map) in a.brute_force_rounds.iter().enumerate() {
        map.write_csv(create(&dir.join(format!("brute_force_round_{r}.csv")))?)?;
    }
    Ok(())
}

fn write_gains(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["evaluation", "strategy", "trial", "realization", "total", "signal", "dispersion"])?;
    let mut row = |eval: &str, strategy: &str, trial: usize, real: String, g: &crate::info::InfoGain| {
        wtr.serialize((eval, strategy, trial, real, g.total, g.signal, g.dispersion))
    };
    row("ensemble", "baseline", 0, "mean".into(), &report.baseline)?;
    for (j, g) in report.baseline_per_realization.iter().enumerate() {
        row("ensemble", "baseline", 0, j.to_string(), g)?;
    }
    let groups = report
        .strategies
        .iter()
        .enumerate()
        .chain(report.random_trials.iter().enumerate())
        .chain(report.brute_force.iter().enumerate());
    for (trial, e) in groups {
        let s = e.plan.strategy.as_str();
        row("ensemble", s, trial, "mean".into(), &e.gain)?;
        for (j, g) in e.per_realization.iter().enumerate() {
            row("ensemble", s, trial, j.to_string(), g)?;
        }
    }
    if let Some(single) = &report.single_realization {
        row("held_out", "baseline", 0, "truth".into(), &single.baseline)?;
        for (trial, e) in single.strategies.iter().enumerate().chain(single.random_trials.iter().enumerate()) {
            row("held_out", e.plan.strategy.as_str(), trial, "truth".into(), &e.gain)?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Every `report.json` below `dir`, in path order.
pub fn load_reports(dir: &Path) -> Result<Vec<ExperimentReport>> {
    let mut paths = Vec::new();
    collect(dir, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            out.push(path);
        }
    }
    Ok(())
}
