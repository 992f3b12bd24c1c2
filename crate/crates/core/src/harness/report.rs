use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario};
use crate::da::{GaussianPosterior, PSD_TOL};
use crate::deployment::{DeploymentPlan, Strategy};
use crate::info::InfoGain;
use crate::linalg;
use crate::rng::SeedLedger;
use crate::Point;

/// A placement and the gain it achieves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub plan: DeploymentPlan,
    /// Ensemble mean for real-time runs; the single gain otherwise.
    pub gain: InfoGain,
    /// One gain per forecast member (real time only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_realization: Vec<InfoGain>,
}

/// Placements scored on one held-out realization (real time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleRealization {
    pub baseline: InfoGain,
    pub strategies: Vec<Evaluation>,
    pub random_trials: Vec<Evaluation>,
}

/// Counts of invariant checks and their violations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantTally {
    pub psd_checks: usize,
    pub psd_violations: usize,
    pub gain_checks: usize,
    pub negative_gains: usize,
    pub plan_checks: usize,
    pub distance_violations: usize,
}

impl InvariantTally {
    pub fn violations(&self) -> usize {
        self.psd_violations + self.negative_gains + self.distance_violations
    }

    pub fn merge(&mut self, other: &InvariantTally) {
        self.psd_checks += other.psd_checks;
        self.psd_violations += other.psd_violations;
        self.gain_checks += other.gain_checks;
        self.negative_gains += other.negative_gains;
        self.plan_checks += other.plan_checks;
        self.distance_violations += other.distance_violations;
    }

    pub fn check_posterior(&mut self, p: &GaussianPosterior) {
        self.psd_checks += p.len();
        self.psd_violations += p.cov.iter().filter(|c| !linalg::is_psd(c, PSD_TOL)).count();
    }

    pub fn check_gains<'a>(&mut self, gains: impl IntoIterator<Item = &'a InfoGain>) {
        for g in gains {
            self.gain_checks += 1;
            if !g.is_valid() {
                self.negative_gains += 1;
            }
        }
    }

    pub fn check_plan(&mut self, plan: &DeploymentPlan, existing: &[Point]) {
        if plan.strategy.enforces_distance() {
            self.plan_checks += 1;
            self.distance_violations += plan.distance_violations(existing);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub experiment: usize,
    /// Truth redraws needed before every placement was feasible.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub draw: usize,
    pub seeds: SeedLedger,
    pub config: ExperimentConfig,
    /// Gain with the existing drifters only.
    pub baseline: InfoGain,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline_per_realization: Vec<InfoGain>,
    pub strategies: Vec<Evaluation>,
    pub random_trials: Vec<Evaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brute_force: Option<Evaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_realization: Option<SingleRealization>,
    pub invariants: InvariantTally,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl ExperimentReport {
    pub fn strategy(&self, s: Strategy) -> Option<&Evaluation> {
        self.strategies.iter().find(|e| e.plan.strategy == s)
    }

    pub fn random_gains(&self, with_distance: bool) -> Vec<f64> {
        random_totals(&self.random_trials, with_distance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub(crate) fn random_totals(trials: &[Evaluation], with_distance: bool) -> Vec<f64> {
    let want = if with_distance {
        Strategy::RandomWithDistance
    } else {
        Strategy::Random
    };
    trials
        .iter()
        .filter(|e| e.plan.strategy == want)
        .map(|e| e.gain.total)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub stage: String,
    pub seconds: f64,
}

/// Wall-clock seconds per stage, kept apart from the deterministic report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingLedger {
    pub entries: Vec<TimingEntry>,
}

impl TimingLedger {
    pub fn time<T>(&mut self, stage: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed().as_secs_f64());
        out
    }

    pub fn record(&mut self, stage: impl Into<String>, seconds: f64) {
        self.entries.push(TimingEntry {
            stage: stage.into(),
            seconds,
        });
    }

    /// Total seconds over entries named `stage`.
    pub fn seconds(&self, stage: &str) -> Option<f64> {
        let mut found = false;
        let total = self
            .entries
            .iter()
            .filter(|e| e.stage == stage)
            .inspect(|_| found = true)
            .map(|e| e.seconds)
            .sum();
        found.then_some(total)
    }
}
