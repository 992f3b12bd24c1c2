//! Pieces shared by both scenarios.

use std::sync::Mutex;

use super::report::{Evaluation, InvariantTally, TimingLedger};
use super::ExperimentConfig;
use crate::da::{self, GaussianPosterior};
use crate::deployment::{brute_force_greedy, DeploymentPlan, Strategy};
use crate::descriptor::{CostMap, Grid};
use crate::flow::{equilibrium_distribution, FlowParams, FlowRealization, ModeSet};
use crate::info::{average_series, gain_series, InfoGain, Reference};
use crate::rng::{derive_seed, SeedLedger};
use crate::tracer::{advect, Label, TrajectorySet};
use crate::{Point, Result};

pub(crate) struct Model {
    pub modes: ModeSet,
    pub params: FlowParams,
    pub equilibrium: GaussianPosterior,
    pub reference: Reference,
}

impl Model {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let (modes, params) = cfg.flow.build()?;
        let equilibrium = equilibrium_distribution(&params, &modes)?;
        let reference = Reference::from_posterior(&equilibrium)?;
        Ok(Self {
            modes,
            params,
            equilibrium,
            reference,
        })
    }

    pub fn equilibrium_at(&self, t: f64) -> GaussianPosterior {
        self.equilibrium.clone().at_time(t)
    }
}

/// Tracks of drifters released at `positions` at time `t`, followed backward
/// over `back` and forward over `fwd` through `flow`.
///
/// The noise of a drifter depends only on `seed` and its release point, so
/// the same release gets the same path whichever plan it belongs to.
pub(crate) fn release(
    model: &Model,
    flow: &FlowRealization,
    positions: &[Point],
    t: f64,
    back: f64,
    fwd: f64,
    dt: f64,
    seed: u64,
) -> Result<TrajectorySet> {
    let mut out: Option<TrajectorySet> = None;
    for p in positions {
        let own = derive_seed(seed, &format!("{:.12e},{:.12e}", p[0], p[1]));
        let forward = advect(flow, &model.modes, &model.params, &[*p], (t, t + fwd), dt, derive_seed(own, "forward"), true)?;
        let track = if back > 0.0 {
            let backward =
                advect(flow, &model.modes, &model.params, &[*p], (t, t - back), dt, derive_seed(own, "backward"), true)?;
            backward.concat_time(&forward)?
        } else {
            forward
        };
        out = Some(match out {
            None => track,
            Some(acc) => acc.merge(&track)?,
        });
    }
    Ok(out
        .map(|s| s.relabel(Label::New))
        .unwrap_or_else(|| TrajectorySet::empty(t - back, dt, 0)))
}

pub(crate) fn time_average(
    model: &Model,
    posterior: &GaussianPosterior,
    window: [f64; 2],
    tally: &mut InvariantTally,
) -> Result<InfoGain> {
    tally.check_posterior(posterior);
    let series = gain_series(posterior, &model.reference, window)?;
    tally.check_gains(&series);
    let g = average_series(&series, window)?;
    tally.check_gains([&g]);
    Ok(g)
}

/// Time-averaged gain of the smoothing posterior over the whole record.
pub(crate) fn smoothed_gain(
    model: &Model,
    obs: &TrajectorySet,
    init: &GaussianPosterior,
    tally: &mut InvariantTally,
) -> Result<InfoGain> {
    let f = da::filter(obs, &model.params, &model.modes, init)?;
    let s = da::smoother(obs, &model.params, &model.modes, &f)?;
    tally.check_posterior(&f);
    time_average(model, &s, [obs.t0, obs.t_end()], tally)
}

/// Time-averaged gain of the filtering posterior over the whole record.
pub(crate) fn filtered_gain(
    model: &Model,
    obs: &TrajectorySet,
    init: &GaussianPosterior,
    tally: &mut InvariantTally,
) -> Result<InfoGain> {
    let f = da::filter(obs, &model.params, &model.modes, init)?;
    time_average(model, &f, [obs.t0, obs.t_end()], tally)
}

/// Greedy exact search run one timed round at a time.
pub(crate) fn greedy_rounds<G>(
    eval: G,
    grid: Grid,
    existing: &[Point],
    l2: usize,
    min_distance: f64,
    timing: &mut TimingLedger,
) -> Result<(DeploymentPlan, Vec<CostMap>)>
where
    G: Fn(&[Point]) -> Result<f64> + Sync + Send,
{
    let mut placed: Vec<Point> = Vec::new();
    let mut maps = Vec::new();
    for _ in 0..l2 {
        let mut blocked = existing.to_vec();
        blocked.extend_from_slice(&placed);
        let prefix = placed.clone();
        let search = timing.time("brute_force_round", || {
            brute_force_greedy(
                |trial: &[Point]| {
                    let mut all = prefix.clone();
                    all.extend_from_slice(trial);
                    eval(&all)
                },
                grid,
                &blocked,
                1,
                min_distance,
            )
        })?;
        placed.push(search.plan.positions[0]);
        maps.extend(search.rounds);
    }
    Ok((
        DeploymentPlan {
            strategy: Strategy::BruteForceGreedy,
            positions: placed,
            min_distance,
            seed: None,
            provenance: format!("exact gain, {}x{} candidates", grid.m, grid.m),
        },
        maps,
    ))
}

/// Shared tally for evaluations run on worker threads.
pub(crate) struct SharedTally(Mutex<InvariantTally>);

impl SharedTally {
    pub fn new() -> Self {
        Self(Mutex::new(InvariantTally::default()))
    }

    pub fn add(&self, t: &InvariantTally) {
        self.0.lock().expect("tally lock").merge(t);
    }

    pub fn into_inner(self) -> InvariantTally {
        self.0.into_inner().expect("tally lock")
    }
}

pub(crate) fn evaluation(plan: DeploymentPlan, gain: InfoGain, per_realization: Vec<InfoGain>) -> Evaluation {
    Evaluation {
        plan,
        gain,
        per_realization,
    }
}

/// Seeds of the random trials, with-distance trials first.
pub(crate) fn trial_seeds(seeds: &mut SeedLedger, prefix: &str, with_distance: usize, without_distance: usize) -> Vec<(bool, u64)> {
    let mut out = Vec::with_capacity(with_distance + without_distance);
    for i in 0..with_distance {
        out.push((true, seeds.seed(format!("{prefix}/with_distance/{i}"))));
    }
    for i in 0..without_distance {
        out.push((false, seeds.seed(format!("{prefix}/without_distance/{i}"))));
    }
    out
}
