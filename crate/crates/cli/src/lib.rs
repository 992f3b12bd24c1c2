//! Command-line front end: `run`, `map`, `score`, `validate` and `preset`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use driftdeploy::deployment::Strategy;
use driftdeploy::harness::{
    load_reports, resolve_out_dir, run_experiment, skill_table, write_bundle, ExperimentConfig, ExperimentReport,
    Scenario, OUT_DIR_ENV,
};
use driftdeploy::validate::quick_battery;
use driftdeploy::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "driftdeploy", version, about = "Information-driven drifter deployment experiments")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every experiment of a configuration and write one bundle each.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of experiments.
        #[arg(long)]
        experiments: Option<usize>,
    },
    /// Write the surrogate cost map of one experiment's truth and posterior.
    Map {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        experiment: usize,
    },
    /// Aggregate reports below a directory into a skill table.
    Score {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,25,50,75,95")]
        percentiles: Vec<f64>,
        /// Directory for `skill_table.csv`; the table goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the quick oracle and invariant battery.
    Validate,
    /// Print a preset configuration.
    Preset {
        #[arg(value_enum)]
        scenario: PresetName,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetName {
    Reanalysis,
    Realtime,
}

/// Parses `argv` (program name first) and runs the command. Returns the exit
/// code: 0 on success, 1 on usage or input errors, 2 on numerical failure.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code of a failed command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        driftdeploy::set_threads(n)?;
    }
    match cli.command {
        Command::Run {
            config,
            out: out_dir,
            seed,
            experiments,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(n) = experiments {
                cfg.n_experiments = n;
            }
            cfg.validate()?;
            let dir = output_dir(out_dir.as_deref(), &cfg);
            fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            fs::write(dir.join("config.json"), cfg.to_json() + "\n").map_err(|e| io_error(&dir, e))?;
            for e in 0..cfg.n_experiments {
                let run = run_experiment(&cfg, e)?;
                write_bundle(&dir.join(format!("experiment_{e:03}")), &run)?;
                writeln!(out, "{}", summary(&run.report)).map_err(|e| io_error(&dir, e))?;
            }
            let _ = writeln!(err, "wrote {} bundle(s) to {}", cfg.n_experiments, dir.display());
            Ok(EXIT_OK)
        }
        Command::Map {
            config,
            out: out_dir,
            seed,
            experiment,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if cfg.l2 == 0 {
                cfg.l2 = 1;
            }
            cfg.strategies = vec![Strategy::SurrogateAllAtOnce];
            cfg.random_with_distance = 0;
            cfg.random_without_distance = 0;
            cfg.single_random_with_distance = 0;
            cfg.single_random_without_distance = 0;
            cfg.brute_force_grid = None;
            cfg.validate()?;
            let dir = output_dir(out_dir.as_deref(), &cfg);
            let run = run_experiment(&cfg, experiment)?;
            write_bundle(&dir, &run)?;
            let map = run.artifacts.cost_map.as_ref().expect("a drifter is placed");
            let (cell, _) = map.argmax().expect("map has an unmasked cell");
            let c = map.grid.center(cell);
            writeln!(
                out,
                "cost map {0}x{0} written to {1}; maximum at ({2:.4}, {3:.4})",
                map.grid.m,
                dir.join("cost_map.csv").display(),
                c[0],
                c[1]
            )
            .map_err(|e| io_error(&dir, e))?;
            Ok(EXIT_OK)
        }
        Command::Score {
            input,
            percentiles,
            out: out_dir,
        } => {
            if !input.is_dir() {
                return Err(Error::InvalidArgument(format!("{} is not a directory", input.display())));
            }
            let reports = load_reports(&input)?;
            if reports.is_empty() {
                return Err(Error::InvalidArgument(format!("no report.json below {}", input.display())));
            }
            let table = skill_table(&reports, &percentiles)?;
            match out_dir {
                Some(dir) => {
                    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
                    let path = dir.join("skill_table.csv");
                    table.write_csv(fs::File::create(&path).map_err(|e| io_error(&path, e))?)?;
                    writeln!(out, "skill table for {} experiment(s) written to {}", reports.len(), path.display())
                        .map_err(|e| io_error(&path, e))?;
                }
                None => table.write_csv(&mut *out)?,
            }
            Ok(EXIT_OK)
        }
        Command::Validate => {
            let checks = quick_battery();
            let mut failed = 0;
            for c in &checks {
                failed += !c.passed as usize;
                writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)
                    .map_err(|e| io_error(Path::new("stdout"), e))?;
            }
            Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERICAL })
        }
        Command::Preset { scenario } => {
            let cfg = ExperimentConfig::preset(match scenario {
                PresetName::Reanalysis => Scenario::Reanalysis,
                PresetName::Realtime => Scenario::Realtime,
            });
            writeln!(out, "{}", cfg.to_json()).map_err(|e| io_error(Path::new("stdout"), e))?;
            Ok(EXIT_OK)
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    let env = std::env::var(OUT_DIR_ENV).ok();
    resolve_out_dir(flag, env.as_deref(), cfg.out.as_deref())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn summary(r: &ExperimentReport) -> String {
    let mut line = format!("experiment {}: baseline {:.4}", r.experiment, r.baseline.total);
    for e in &r.strategies {
        line += &format!(", {} {:.4}", e.plan.strategy.as_str(), e.gain.total);
    }
    for (label, with) in [("random_with_distance", true), ("random", false)] {
        let g = r.random_gains(with);
        if !g.is_empty() {
            line += &format!(", {label} mean {:.4}", g.iter().sum::<f64>() / g.len() as f64);
        }
    }
    if let Some(bf) = &r.brute_force {
        line += &format!(", brute_force_greedy {:.4}", bf.gain.total);
    }
    line
}
