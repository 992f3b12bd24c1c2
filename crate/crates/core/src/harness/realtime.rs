use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::pipeline::{evaluation, filtered_gain, greedy_rounds, release, trial_seeds, Model, SharedTally};
use super::report::{Evaluation, ExperimentReport, InvariantTally, SingleRealization, TimingLedger};
use super::{experiment_seed, with_redraws, Artifacts, ExperimentConfig, RunOutput, Scenario};
use crate::da::{self, AugmentedState, GaussianPosterior};
use crate::deployment::{random_plan, select_all_at_once, DeploymentPlan, Strategy};
use crate::descriptor::{ld_expected, Grid};
use crate::error::StageExt;
use crate::flow::{sample_equilibrium, simulate_flow, FlowRealization};
use crate::info::{expected_gain, InfoGain};
use crate::linalg::psd_sqrt;
use crate::rng::{rng_from_seed, SeedLedger};
use crate::tracer::{advect, uniform_initial_positions, TrajectorySet};
use crate::{par, Error, Point, Result};

/// One forecast member: a flow on `[T, T + τ]` and the existing drifters
/// continued through it.
struct Member {
    flow: FlowRealization,
    l1: TrajectorySet,
    new_seed: u64,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    t_obs: f64,
    /// `p(U(T) | X(s ≤ T))`.
    prior: GaussianPosterior,
}

impl Context<'_> {
    fn member_gain(&self, member: &Member, positions: &[Point], tally: &mut InvariantTally) -> Result<InfoGain> {
        let new = release(&self.model, &member.flow, positions, self.t_obs, 0.0, self.cfg.tau, self.cfg.dt, member.new_seed)?;
        let obs = member.l1.merge(&new)?;
        filtered_gain(&self.model, &obs, &self.prior, tally)
    }

    fn ensemble_gain(&self, members: &[Member], positions: &[Point], tally: &mut InvariantTally) -> Result<(InfoGain, Vec<InfoGain>)> {
        let per = members
            .iter()
            .map(|m| self.member_gain(m, positions, tally))
            .collect::<Result<Vec<_>>>()?;
        let mean = expected_gain(&per)?;
        tally.check_gains([&mean]);
        Ok((mean, per))
    }

    fn evaluate(&self, members: &[Member], plan: DeploymentPlan, tally: &mut InvariantTally) -> Result<Evaluation> {
        let (gain, per) = self.ensemble_gain(members, &plan.positions, tally)?;
        Ok(evaluation(plan, gain, per))
    }

    fn evaluate_single(&self, held_out: &Member, plan: DeploymentPlan, tally: &mut InvariantTally) -> Result<Evaluation> {
        let gain = self.member_gain(held_out, &plan.positions, tally)?;
        Ok(evaluation(plan, gain, Vec::new()))
    }
}

fn random_trials<F>(
    seeds: &mut SeedLedger,
    prefix: &str,
    with_distance: usize,
    without_distance: usize,
    cfg: &ExperimentConfig,
    existing: &[Point],
    tally: &mut InvariantTally,
    eval: F,
) -> Result<Vec<Evaluation>>
where
    F: Fn(DeploymentPlan, &mut InvariantTally) -> Result<Evaluation> + Sync + Send,
{
    let trials = trial_seeds(seeds, prefix, with_distance, without_distance);
    let shared = SharedTally::new();
    let results = par::map(trials, |(enforce, seed)| {
        let plan = random_plan(cfg.l2, cfg.min_distance, existing, seed, enforce)?;
        let mut t = InvariantTally::default();
        t.check_plan(&plan, existing);
        let out = eval(plan, &mut t);
        shared.add(&t);
        out
    });
    tally.merge(&shared.into_inner());
    results.into_iter().collect()
}

pub fn run_realtime(cfg: &ExperimentConfig, experiment: usize) -> Result<RunOutput> {
    if cfg.scenario != Scenario::Realtime {
        return Err(Error::invalid("configuration is not a real-time scenario"));
    }
    cfg.validate()?;
    with_redraws(|draw| realtime_draw(cfg, experiment, draw))
}

fn realtime_draw(cfg: &ExperimentConfig, experiment: usize, draw: usize) -> Result<RunOutput> {
    let mut seeds = SeedLedger::new(experiment_seed(cfg.seed, experiment, draw));
    let mut timing = TimingLedger::default();
    let mut tally = InvariantTally::default();
    let model = Model::new(cfg)?;
    let t_obs = cfg.t_obs.expect("validated");
    let t_end = t_obs + cfg.tau;

    // the truth continues past T; its continuation is the held-out realization
    let truth = timing
        .time("truth", || {
            let mut rng = rng_from_seed(seeds.seed("truth/init"));
            let init = sample_equilibrium(&model.params, &model.modes, &mut rng);
            simulate_flow(&model.params, &model.modes, &init, (0.0, t_end), cfg.dt, seeds.seed("truth/flow"))
        })
        .stage("truth")?;
    let l1_all = timing
        .time("l1_advection", || {
            let starts = uniform_initial_positions(cfg.l1, seeds.seed("l1/start"));
            advect(&truth, &model.modes, &model.params, &starts, (0.0, t_end), cfg.dt, seeds.seed("l1/noise"), true)
        })
        .stage("l1_advection")?;
    let l1_past = l1_all.window(0.0, t_obs)?;

    let posterior = timing
        .time("da_l1", || da::filter(&l1_past, &model.params, &model.modes, &model.equilibrium_at(0.0)))
        .stage("filter")?;
    tally.check_posterior(&posterior);
    let prior = posterior.last();
    let existing = l1_past.positions_at(l1_past.n_times() - 1);

    let members = timing
        .time("forecast_ensemble", || -> Result<Vec<Member>> {
            let aug = AugmentedState::new(&model.modes);
            let root = psd_sqrt(&prior.cov[0]);
            let dim = aug.dim();
            (0..cfg.ensemble)
                .map(|j| {
                    let mut rng = rng_from_seed(seeds.seed(format!("ensemble/{j}/init")));
                    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let init = aug.complexify(&(&prior.mean[0] + &root * z));
                    let flow = simulate_flow(
                        &model.params,
                        &model.modes,
                        &init,
                        (t_obs, t_end),
                        cfg.dt,
                        seeds.seed(format!("ensemble/{j}/flow")),
                    )?;
                    let l1 = advect(
                        &flow,
                        &model.modes,
                        &model.params,
                        &existing,
                        (t_obs, t_end),
                        cfg.dt,
                        seeds.seed(format!("ensemble/{j}/l1")),
                        true,
                    )?;
                    Ok(Member {
                        flow,
                        l1,
                        new_seed: seeds.seed(format!("ensemble/{j}/new")),
                    })
                })
                .collect()
        })
        .stage("forecast_ensemble")?;

    let held_out = Member {
        l1: l1_all.window(t_obs, t_end)?,
        new_seed: seeds.seed("held_out/new"),
        flow: truth,
    };

    let ctx = Context {
        cfg,
        model,
        t_obs,
        prior,
    };

    let (baseline, baseline_per) = timing
        .time("evaluation/baseline", || ctx.ensemble_gain(&members, &[], &mut tally))
        .stage("baseline")?;

    let mut report = ExperimentReport {
        scenario: Scenario::Realtime,
        experiment,
        draw,
        seeds: SeedLedger::default(),
        config: ExperimentConfig { out: None, ..cfg.clone() },
        baseline,
        baseline_per_realization: baseline_per,
        strategies: Vec::new(),
        random_trials: Vec::new(),
        brute_force: None,
        single_realization: None,
        invariants: InvariantTally::default(),
    };
    let mut artifacts = Artifacts {
        cost_map: None,
        existing: l1_all.clone(),
        deployed: None,
        brute_force_rounds: Vec::new(),
    };
    let single_baseline = ctx.member_gain(&held_out, &[], &mut tally).stage("baseline")?;

    if cfg.l2 > 0 {
        let flows: Vec<FlowRealization> = members.iter().map(|m| m.flow.clone()).collect();
        let map = timing
            .time("surrogate_map", || {
                ld_expected(&flows, &ctx.model.modes, &ctx.model.params, Grid::new(cfg.grid)?, t_obs, 0.0, cfg.tau, cfg.probe_step())
            })
            .stage("surrogate_map")?;
        drop(flows);

        let mut single = Vec::new();
        for &strategy in &cfg.strategies {
            if strategy != Strategy::SurrogateAllAtOnce {
                return Err(Error::invalid(format!("unsupported strategy {}", strategy.as_str())));
            }
            let plan = timing
                .time("placement/surrogate_all_at_once", || {
                    select_all_at_once(&map, &existing, cfg.l2, cfg.min_distance)
                })
                .stage("placement")?;
            tally.check_plan(&plan, &existing);
            single.push(ctx.evaluate_single(&held_out, plan.clone(), &mut tally).stage("evaluation")?);
            let eval = timing
                .time(format!("evaluation/{}", strategy.as_str()), || ctx.evaluate(&members, plan, &mut tally))
                .stage("evaluation")?;
            report.strategies.push(eval);
        }
        if let Some(first) = report.strategies.first() {
            let new = release(&ctx.model, &held_out.flow, &first.plan.positions, t_obs, 0.0, cfg.tau, cfg.dt, held_out.new_seed)?;
            artifacts.deployed = Some(new);
        }

        report.random_trials = timing
            .time("random_trials", || {
                random_trials(
                    &mut seeds,
                    "random",
                    cfg.random_with_distance,
                    cfg.random_without_distance,
                    cfg,
                    &existing,
                    &mut tally,
                    |plan, t| ctx.evaluate(&members, plan, t),
                )
            })
            .stage("random_trials")?;
        let single_trials = timing
            .time("single_random_trials", || {
                random_trials(
                    &mut seeds,
                    "single_random",
                    cfg.single_random_with_distance,
                    cfg.single_random_without_distance,
                    cfg,
                    &existing,
                    &mut tally,
                    |plan, t| ctx.evaluate_single(&held_out, plan, t),
                )
            })
            .stage("single_random_trials")?;
        report.single_realization = Some(SingleRealization {
            baseline: single_baseline,
            strategies: single,
            random_trials: single_trials,
        });

        if let Some(m) = cfg.brute_force_grid {
            let shared = SharedTally::new();
            let (plan, maps) = greedy_rounds(
                |positions: &[Point]| {
                    let mut t = InvariantTally::default();
                    let g = ctx.ensemble_gain(&members, positions, &mut t);
                    shared.add(&t);
                    Ok(g?.0.total)
                },
                Grid::new(m)?,
                &existing,
                cfg.l2,
                cfg.min_distance,
                &mut timing,
            )
            .stage("brute_force")?;
            tally.merge(&shared.into_inner());
            tally.check_plan(&plan, &existing);
            report.brute_force = Some(ctx.evaluate(&members, plan, &mut tally).stage("evaluation")?);
            artifacts.brute_force_rounds = maps;
        }
        artifacts.cost_map = Some(map);
    } else {
        report.single_realization = Some(SingleRealization {
            baseline: single_baseline,
            strategies: Vec::new(),
            random_trials: Vec::new(),
        });
    }

    report.invariants = tally;
    report.seeds = seeds;
    Ok(RunOutput {
        report,
        timing,
        artifacts,
    })
}
