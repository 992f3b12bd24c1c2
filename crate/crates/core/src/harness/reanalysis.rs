use super::pipeline::{evaluation, greedy_rounds, release, smoothed_gain, trial_seeds, Model, SharedTally};
use super::report::{Evaluation, ExperimentReport, InvariantTally, TimingLedger};
use super::{experiment_seed, with_redraws, Artifacts, ExperimentConfig, RunOutput, Scenario};
use crate::da;
use crate::deployment::{random_plan, select_all_at_once, select_sequential, DeploymentPlan, Strategy};
use crate::descriptor::{ld_expected, CostMap, Grid};
use crate::error::StageExt;
use crate::flow::{sample_equilibrium, simulate_flow, FlowRealization};
use crate::rng::{rng_from_seed, SeedLedger};
use crate::tracer::{advect, uniform_initial_positions, TrajectorySet};
use crate::{par, Error, Point, Result};

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    truth: FlowRealization,
    l1: TrajectorySet,
    init: da::GaussianPosterior,
    t_star: f64,
    new_seed: u64,
}

impl Context<'_> {
    fn tracks(&self, positions: &[Point]) -> Result<TrajectorySet> {
        let tau = self.cfg.tau;
        release(&self.model, &self.truth, positions, self.t_star, tau, tau, self.cfg.dt, self.new_seed)
    }

    fn observations(&self, positions: &[Point]) -> Result<TrajectorySet> {
        self.l1.merge(&self.tracks(positions)?)
    }

    fn gain(&self, positions: &[Point], tally: &mut InvariantTally) -> Result<crate::info::InfoGain> {
        smoothed_gain(&self.model, &self.observations(positions)?, &self.init, tally)
    }

    fn evaluate(&self, plan: DeploymentPlan, tally: &mut InvariantTally) -> Result<Evaluation> {
        let gain = self.gain(&plan.positions, tally)?;
        Ok(evaluation(plan, gain, Vec::new()))
    }

    /// Expected descriptor map from posterior samples given `obs`.
    fn surrogate(&self, obs: &TrajectorySet, samples_seed: u64, tally: &mut InvariantTally) -> Result<CostMap> {
        let m = &self.model;
        let f = da::filter(obs, &m.params, &m.modes, &self.init).stage("filter")?;
        let s = da::smoother(obs, &m.params, &m.modes, &f).stage("smoother")?;
        tally.check_posterior(&f);
        tally.check_posterior(&s);
        let samples = da::backward_sample(&s, &f, &m.params, &m.modes, self.cfg.ensemble, samples_seed)
            .stage("posterior_sampling")?;
        ld_expected(
            &samples,
            &m.modes,
            &m.params,
            Grid::new(self.cfg.grid)?,
            self.t_star,
            self.cfg.tau,
            self.cfg.tau,
            self.cfg.probe_step(),
        )
        .stage("surrogate_map")
    }
}

pub fn run_reanalysis(cfg: &ExperimentConfig, experiment: usize) -> Result<RunOutput> {
    if cfg.scenario != Scenario::Reanalysis {
        return Err(Error::invalid("configuration is not a reanalysis scenario"));
    }
    cfg.validate()?;
    with_redraws(|draw| reanalysis_draw(cfg, experiment, draw))
}

fn reanalysis_draw(cfg: &ExperimentConfig, experiment: usize, draw: usize) -> Result<RunOutput> {
    let mut seeds = SeedLedger::new(experiment_seed(cfg.seed, experiment, draw));
    let mut timing = TimingLedger::default();
    let mut tally = InvariantTally::default();
    let model = Model::new(cfg)?;
    let t_star = cfg.t_star.expect("validated");
    let (t_a, t_b) = (t_star - cfg.tau, t_star + cfg.tau);

    let truth = timing.time("truth", || {
        let mut rng = rng_from_seed(seeds.seed("truth/init"));
        let init = sample_equilibrium(&model.params, &model.modes, &mut rng);
        simulate_flow(&model.params, &model.modes, &init, (0.0, t_b), cfg.dt, seeds.seed("truth/flow"))
    })
    .stage("truth")?;

    let l1 = timing
        .time("l1_advection", || {
            let starts = uniform_initial_positions(cfg.l1, seeds.seed("l1/start"));
            advect(&truth, &model.modes, &model.params, &starts, (0.0, t_b), cfg.dt, seeds.seed("l1/noise"), true)?
                .window(t_a, t_b)
        })
        .stage("l1_advection")?;

    let ctx = Context {
        cfg,
        init: model.equilibrium_at(t_a),
        model,
        truth,
        l1,
        t_star,
        new_seed: seeds.seed("new/noise"),
    };

    let baseline = timing
        .time("evaluation/baseline", || ctx.gain(&[], &mut tally))
        .stage("baseline")?;

    let mut report = ExperimentReport {
        scenario: Scenario::Reanalysis,
        experiment,
        draw,
        seeds: SeedLedger::default(),
        config: ExperimentConfig { out: None, ..cfg.clone() },
        baseline,
        baseline_per_realization: Vec::new(),
        strategies: Vec::new(),
        random_trials: Vec::new(),
        brute_force: None,
        single_realization: None,
        invariants: InvariantTally::default(),
    };
    let mut artifacts = Artifacts {
        cost_map: None,
        existing: ctx.l1.clone(),
        deployed: None,
        brute_force_rounds: Vec::new(),
    };

    if cfg.l2 > 0 {
        let existing = ctx.l1.positions_at(ctx.l1.index_of(t_star).expect("t* lies on the grid"));
        let samples_seed = seeds.seed("posterior/samples");
        let map = timing
            .time("surrogate_map", || ctx.surrogate(&ctx.l1, samples_seed, &mut tally))
            .stage("surrogate_map")?;

        for &strategy in &cfg.strategies {
            let plan = match strategy {
                Strategy::SurrogateAllAtOnce => timing
                    .time("placement/surrogate_all_at_once", || {
                        select_all_at_once(&map, &existing, cfg.l2, cfg.min_distance)
                    })
                    .stage("placement")?,
                Strategy::SurrogateSequential => {
                    let mut round_tally = InvariantTally::default();
                    let mut round_timing = TimingLedger::default();
                    let plan = select_sequential(
                        |all: &[Point]| {
                            if all.len() == existing.len() {
                                return Ok(map.clone());
                            }
                            round_timing.time("sequential_map", || {
                                let obs = ctx.observations(&all[existing.len()..])?;
                                ctx.surrogate(&obs, samples_seed, &mut round_tally)
                            })
                        },
                        &existing,
                        cfg.l2,
                        cfg.min_distance,
                    )
                    .stage("placement")?;
                    tally.merge(&round_tally);
                    timing.entries.extend(round_timing.entries);
                    plan
                }
                other => return Err(Error::invalid(format!("unsupported strategy {}", other.as_str()))),
            };
            tally.check_plan(&plan, &existing);
            let eval = timing
                .time(format!("evaluation/{}", strategy.as_str()), || ctx.evaluate(plan, &mut tally))
                .stage("evaluation")?;
            report.strategies.push(eval);
        }
        if let Some(first) = report.strategies.first() {
            artifacts.deployed = Some(ctx.tracks(&first.plan.positions)?);
        }

        let trials = trial_seeds(&mut seeds, "random", cfg.random_with_distance, cfg.random_without_distance);
        let shared = SharedTally::new();
        let results = timing.time("random_trials", || {
            par::map(trials, |(enforce, seed)| {
                let plan = random_plan(cfg.l2, cfg.min_distance, &existing, seed, enforce)?;
                let mut t = InvariantTally::default();
                t.check_plan(&plan, &existing);
                let eval = ctx.evaluate(plan, &mut t);
                shared.add(&t);
                eval
            })
        });
        tally.merge(&shared.into_inner());
        report.random_trials = results.into_iter().collect::<Result<_>>().stage("random_trials")?;

        if let Some(m) = cfg.brute_force_grid {
            let shared = SharedTally::new();
            let (plan, maps) = greedy_rounds(
                |positions: &[Point]| {
                    let mut t = InvariantTally::default();
                    let g = ctx.gain(positions, &mut t);
                    shared.add(&t);
                    Ok(g?.total)
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
            report.brute_force = Some(ctx.evaluate(plan, &mut tally).stage("evaluation")?);
            artifacts.brute_force_rounds = maps;
        }
        artifacts.cost_map = Some(map);
    }

    report.invariants = tally;
    report.seeds = seeds;
    Ok(RunOutput {
        report,
        timing,
        artifacts,
    })
}
