use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::deployment::Strategy;
use crate::flow::{FlowParams, ModeSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Reanalysis,
    Realtime,
}

/// Homogeneous flow model: every Fourier pair shares the same parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub kmax: i32,
    pub d: f64,
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub f_re: f64,
    #[serde(default)]
    pub f_im: f64,
    pub sigma: f64,
    pub sigma_x: f64,
}

impl FlowConfig {
    pub fn build(&self) -> Result<(ModeSet, FlowParams)> {
        let modes = ModeSet::build(self.kmax)?;
        let params = FlowParams::homogeneous(
            &modes,
            self.d,
            self.omega,
            Complex64::new(self.f_re, self.f_im),
            self.sigma,
            self.sigma_x,
        );
        params.validate(&modes)?;
        Ok((modes, params))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub flow: FlowConfig,
    /// Drifters already deployed.
    pub l1: usize,
    /// Drifters to place.
    pub l2: usize,
    /// Deployment time (reanalysis).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_star: Option<f64>,
    /// End of the observation period (real time).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_obs: Option<f64>,
    /// Half-width of the reanalysis window, or the forecast horizon.
    pub tau: f64,
    pub dt: f64,
    /// Step of the descriptor probes; defaults to `dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_dt: Option<f64>,
    /// Cells per side of the descriptor grid.
    pub grid: usize,
    /// Posterior samples (reanalysis) or forecast members (real time).
    pub ensemble: usize,
    pub n_experiments: usize,
    /// Random placements evaluated like the proposed strategies.
    pub random_with_distance: usize,
    pub random_without_distance: usize,
    /// Random placements evaluated on the held-out realization (real time).
    #[serde(default)]
    pub single_random_with_distance: usize,
    #[serde(default)]
    pub single_random_without_distance: usize,
    pub min_distance: f64,
    pub strategies: Vec<Strategy>,
    /// Candidate grid of the exact greedy search; absent to skip it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brute_force_grid: Option<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reanalysis setup: `d = 0.5`, `σ = 0.5`, ten drifters, four new ones at
    /// `t* = 5` over `[4, 6]`, separation 1.5.
    pub fn reanalysis_preset() -> Self {
        Self {
            scenario: Scenario::Reanalysis,
            flow: FlowConfig {
                kmax: 3,
                d: 0.5,
                omega: 0.0,
                f_re: 0.0,
                f_im: 0.0,
                sigma: 0.5,
                sigma_x: 0.1,
            },
            l1: 10,
            l2: 4,
            t_star: Some(5.0),
            t_obs: None,
            tau: 1.0,
            dt: 1e-3,
            probe_dt: None,
            grid: 32,
            ensemble: 20,
            n_experiments: 10,
            random_with_distance: 30,
            random_without_distance: 30,
            single_random_with_distance: 0,
            single_random_without_distance: 0,
            min_distance: 1.5,
            strategies: vec![Strategy::SurrogateAllAtOnce, Strategy::SurrogateSequential],
            brute_force_grid: None,
            seed: 2024,
            out: None,
        }
    }

    /// Real-time setup: `σ = 0.125`, observations on `[0, 2]`, four new
    /// drifters for `[2, 2.5]`, twenty forecast members, separation 1.
    pub fn realtime_preset() -> Self {
        Self {
            scenario: Scenario::Realtime,
            flow: FlowConfig {
                sigma: 0.125,
                ..Self::reanalysis_preset().flow
            },
            l1: 10,
            l2: 4,
            t_star: None,
            t_obs: Some(2.0),
            tau: 0.5,
            dt: 1e-3,
            probe_dt: None,
            grid: 32,
            ensemble: 20,
            n_experiments: 10,
            random_with_distance: 30,
            random_without_distance: 30,
            single_random_with_distance: 50,
            single_random_without_distance: 50,
            min_distance: 1.0,
            strategies: vec![Strategy::SurrogateAllAtOnce],
            brute_force_grid: None,
            seed: 2024,
            out: None,
        }
    }

    pub fn preset(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Reanalysis => Self::reanalysis_preset(),
            Scenario::Realtime => Self::realtime_preset(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Deployment time: `t*` for reanalysis, `T` for real time.
    pub fn deploy_time(&self) -> f64 {
        match self.scenario {
            Scenario::Reanalysis => self.t_star.unwrap_or(f64::NAN),
            Scenario::Realtime => self.t_obs.unwrap_or(f64::NAN),
        }
    }

    pub fn probe_step(&self) -> f64 {
        self.probe_dt.unwrap_or(self.dt)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if let Some(p) = self.probe_dt {
            if !(p > 0.0) {
                return bad(format!("probe_dt must be positive, got {p}"));
            }
        }
        for (name, n) in [
            ("l1", self.l1),
            ("grid", self.grid),
            ("ensemble", self.ensemble),
            ("n_experiments", self.n_experiments),
        ] {
            if n == 0 {
                return bad(format!("`{name}` must be positive"));
            }
        }
        if !(self.min_distance >= 0.0) {
            return bad(format!("min_distance must be ≥ 0, got {}", self.min_distance));
        }
        if self.brute_force_grid == Some(0) {
            return bad("brute_force_grid must be positive".into());
        }
        for s in &self.strategies {
            if matches!(s, Strategy::Random | Strategy::RandomWithDistance | Strategy::BruteForceGreedy) {
                return bad(format!(
                    "`{}` is not a proposed strategy; use the random and brute-force settings",
                    s.as_str()
                ));
            }
        }
        match self.scenario {
            Scenario::Reanalysis => {
                let Some(t) = self.t_star else {
                    return bad("reanalysis needs `t_star`".into());
                };
                if !(t - self.tau >= 0.0) {
                    return bad(format!("window [t_star − tau, t_star + tau] must start at t ≥ 0, got {}", t - self.tau));
                }
            }
            Scenario::Realtime => {
                let Some(t) = self.t_obs else {
                    return bad("real time needs `t_obs`".into());
                };
                if !(t > 0.0) {
                    return bad(format!("t_obs must be positive, got {t}"));
                }
                if self.strategies.contains(&Strategy::SurrogateSequential) {
                    return bad("the sequential strategy needs future observations and only applies to reanalysis".into());
                }
            }
        }
        self.flow.build()?;
        Ok(())
    }
}
