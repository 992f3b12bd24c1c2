//! End-to-end experiments: configuration, the reanalysis and real-time
//! scenarios, skill scores and on-disk bundles.
//!
//! Every stochastic stage draws from a named stream of the experiment's
//! [`SeedLedger`](crate::rng::SeedLedger), which is stored in the report.
//! Reports are deterministic given the configuration; wall-clock timings are
//! kept in a separate [`TimingLedger`].

mod config;
mod persist;
mod pipeline;
mod realtime;
mod reanalysis;
mod report;
mod score;

pub use config::{ExperimentConfig, FlowConfig, Scenario};
pub use persist::{load_reports, resolve_out_dir, write_bundle, OUT_DIR_ENV};
pub use realtime::run_realtime;
pub use reanalysis::run_reanalysis;
pub use report::{
    Evaluation, ExperimentReport, InvariantTally, SingleRealization, TimingEntry, TimingLedger,
};
pub use score::{percentile, skill_score, skill_table, SkillTable};

use crate::descriptor::CostMap;
use crate::rng::derive_seed;
use crate::tracer::TrajectorySet;
use crate::{Error, Result};

/// Truth draws tried per experiment before an infeasible placement is
/// reported.
pub const MAX_DRAWS: usize = 8;

/// Data products of one experiment besides the report.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub cost_map: Option<CostMap>,
    /// Existing drifters over the whole simulated span.
    pub existing: TrajectorySet,
    /// New drifters of the first proposed plan, released in the truth.
    pub deployed: Option<TrajectorySet>,
    /// Exact-gain maps of the greedy search, one per round.
    pub brute_force_rounds: Vec<CostMap>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub timing: TimingLedger,
    pub artifacts: Artifacts,
}

/// Runs experiment number `experiment` of the configured scenario.
pub fn run_experiment(cfg: &ExperimentConfig, experiment: usize) -> Result<RunOutput> {
    match cfg.scenario {
        Scenario::Reanalysis => run_reanalysis(cfg, experiment),
        Scenario::Realtime => run_realtime(cfg, experiment),
    }
}

/// Master seed of draw `draw` of an experiment.
pub fn experiment_seed(seed: u64, experiment: usize, draw: usize) -> u64 {
    match draw {
        0 => derive_seed(seed, &format!("experiment/{experiment}")),
        d => derive_seed(seed, &format!("experiment/{experiment}/draw/{d}")),
    }
}

fn is_infeasible(e: &Error) -> bool {
    match e {
        Error::InfeasiblePlacement { .. } => true,
        Error::Stage { source, .. } => is_infeasible(source),
        _ => false,
    }
}

/// Runs `attempt` on successive truth draws until no placement is infeasible.
pub(crate) fn with_redraws<T>(mut attempt: impl FnMut(usize) -> Result<T>) -> Result<T> {
    let mut draw = 0;
    loop {
        match attempt(draw) {
            Err(e) if is_infeasible(&e) && draw + 1 < MAX_DRAWS => draw += 1,
            out => return out,
        }
    }
}

/// Runs all `n_experiments`, handing each result to `sink` as it completes.
pub fn run_batch<F>(cfg: &ExperimentConfig, mut sink: F) -> Result<Vec<ExperimentReport>>
where
    F: FnMut(&RunOutput) -> Result<()>,
{
    let mut reports = Vec::with_capacity(cfg.n_experiments);
    for e in 0..cfg.n_experiments {
        let out = run_experiment(cfg, e)?;
        sink(&out)?;
        reports.push(out.report);
    }
    Ok(reports)
}
