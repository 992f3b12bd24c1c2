//! Quick invariant and oracle batteries, and the numerical oracles they use.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::da::{self, PSD_TOL};
use crate::deployment::{random_plan, select_all_at_once};
use crate::descriptor::{CostMap, Grid, MapKind, MapProvenance};
use crate::flow::{equilibrium_distribution, sample_equilibrium, simulate_flow, velocity_at, FlowParams, ModeSet};
use crate::harness::{run_experiment, ExperimentConfig};
use crate::info::gaussian_relative_entropy;
use crate::linalg;
use crate::rng::{rng_from_seed, StreamRng};
use crate::tracer::{advect, torus_distance, uniform_initial_positions};
use crate::{Error, Result};

/// Outcome of one battery entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// `KL(p ‖ q)` by adaptive quadrature.
///
/// In coordinates whitened by `p` and rotated to diagonalize `q`'s precision,
/// both densities factor into one-dimensional terms, each integrated against
/// the standard normal density over `[-14, 14]`.
pub fn kl_by_quadrature(
    p_mean: &DVector<f64>,
    p_cov: &DMatrix<f64>,
    q_mean: &DVector<f64>,
    q_cov: &DMatrix<f64>,
) -> Result<f64> {
    let lp = Cholesky::new(p_cov.clone())
        .ok_or_else(|| Error::invalid("p covariance is not positive definite"))?
        .unpack();
    let q = Cholesky::new(q_cov.clone()).ok_or_else(|| Error::invalid("q covariance is not positive definite"))?;
    let mut m = lp.transpose() * q.solve(&lp);
    linalg::symmetrize(&mut m);
    let eig = SymmetricEigen::new(m);
    let shift = lp
        .solve_lower_triangular(&(q_mean - p_mean))
        .ok_or_else(|| Error::invalid("singular p factor"))?;
    let c = eig.eigenvectors.transpose() * shift;
    let norm = (2.0 * PI).sqrt();
    let mut total = 0.0;
    for (i, &d) in eig.eigenvalues.iter().enumerate() {
        let ci = c[i];
        let f = |w: f64| {
            let phi = (-0.5 * w * w).exp() / norm;
            phi * (-0.5 * w * w + 0.5 * d * (w - ci) * (w - ci) - 0.5 * d.ln())
        };
        total += [(-14.0, -4.0), (-4.0, 4.0), (4.0, 14.0)]
            .iter()
            .map(|&(a, b)| quadrature::double_exponential::integrate(f, a, b, 1e-14).integral)
            .sum::<f64>();
    }
    Ok(total)
}

/// Largest `|∇·u|` over an `n × n` lattice, by central differences of step `h`.
pub fn max_divergence(modes: &ModeSet, params: &FlowParams, coeffs: &[Complex64], n: usize, h: f64) -> Result<f64> {
    let r = &params.eigenvectors;
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let x = [-PI + 2.0 * PI * i as f64 / n as f64, -PI + 2.0 * PI * j as f64 / n as f64];
            let ux_p = velocity_at(modes, coeffs, r, [x[0] + h, x[1]])?[0];
            let ux_m = velocity_at(modes, coeffs, r, [x[0] - h, x[1]])?[0];
            let vy_p = velocity_at(modes, coeffs, r, [x[0], x[1] + h])?[1];
            let vy_m = velocity_at(modes, coeffs, r, [x[0], x[1] - h])?[1];
            worst = worst.max(((ux_p - ux_m) + (vy_p - vy_m)).abs() / (2.0 * h));
        }
    }
    Ok(worst)
}

/// Random SPD matrix `B Bᵀ + εI` with standard normal `B`.
pub fn random_spd(n: usize, eps: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(n, n) * eps
}

pub fn random_vector(n: usize, rng: &mut StreamRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Largest `|closed form − quadrature|` over `count` random pairs in `dim`
/// dimensions.
pub fn kl_oracle_error(dim: usize, count: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (pm, qm) = (random_vector(dim, &mut rng), random_vector(dim, &mut rng));
        let (pc, qc) = (random_spd(dim, 0.5, &mut rng), random_spd(dim, 0.5, &mut rng));
        let closed = gaussian_relative_entropy(&pm, &pc, &qm, &qc)?.total;
        worst = worst.max((closed - kl_by_quadrature(&pm, &pc, &qm, &qc)?).abs());
    }
    Ok(worst)
}

fn kl_check() -> Result<(bool, String)> {
    let e1 = kl_oracle_error(1, 50, 101)?;
    let e5 = kl_oracle_error(5, 20, 105)?;
    Ok((e1 < 1e-6 && e5 < 1e-6, format!("max error 1-D {e1:.2e}, 5-D {e5:.2e}")))
}

fn kl_invariance_check() -> Result<(bool, String)> {
    let mut rng = rng_from_seed(7);
    let mut worst = 0.0f64;
    let mut min_total = f64::INFINITY;
    for _ in 0..20 {
        let (pm, qm) = (random_vector(4, &mut rng), random_vector(4, &mut rng));
        let (pc, qc) = (random_spd(4, 0.5, &mut rng), random_spd(4, 0.5, &mut rng));
        let t = random_spd(4, 1.0, &mut rng);
        let a = gaussian_relative_entropy(&pm, &pc, &qm, &qc)?;
        let b = gaussian_relative_entropy(&(&t * &pm), &(&t * &pc * t.transpose()), &(&t * &qm), &(&t * &qc * t.transpose()))?;
        worst = worst.max((a.total - b.total).abs() / a.total.abs().max(1.0));
        min_total = min_total.min(a.total);
    }
    Ok((worst < 1e-8 && min_total >= -1e-10, format!("max relative change {worst:.2e}, min gain {min_total:.3}")))
}

fn ou_check() -> Result<(bool, String)> {
    let modes = ModeSet::build(3)?;
    let params = FlowParams::eddy(&modes, 0.5, 0.1);
    let mut rng = rng_from_seed(3);
    let init = sample_equilibrium(&params, &modes, &mut rng);
    let flow = simulate_flow(&params, &modes, &init, (0.0, 500.0), 1e-2, 4)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in &flow.coeffs {
        for &i in modes.representatives() {
            sum += c[i].norm_sqr();
            count += 1;
        }
    }
    let pooled = sum / count as f64;
    let div = max_divergence(&modes, &params, flow.coeffs.last().unwrap(), 64, 1e-4)?;
    let rel = (pooled - 0.25).abs() / 0.25;
    Ok((rel < 0.05 && div < 1e-6, format!("pooled variance {pooled:.4} (target 0.25), max divergence {div:.2e}")))
}

fn da_check() -> Result<(bool, String)> {
    let modes = ModeSet::build(2)?;
    let params = FlowParams::eddy(&modes, 0.5, 0.1);
    let mut rng = rng_from_seed(5);
    let init = sample_equilibrium(&params, &modes, &mut rng);
    let flow = simulate_flow(&params, &modes, &init, (0.0, 1.0), 1e-3, 6)?;
    let obs = advect(&flow, &modes, &params, &uniform_initial_positions(6, 7), (0.0, 1.0), 1e-3, 8, true)?;
    let eq = equilibrium_distribution(&params, &modes)?;
    let f = da::filter(&obs, &params, &modes, &eq)?;
    let s = da::smoother(&obs, &params, &modes, &f)?;
    let bad = f.psd_violations() + s.psd_violations();
    let last = f.len() - 1;
    let same = f.mean[last] == s.mean[last] && f.cov[last] == s.cov[last];
    let shrink = linalg::trace(&s.cov[0]) <= linalg::trace(&eq.cov[0]) * (1.0 + PSD_TOL);
    Ok((bad == 0 && same && shrink, format!("{bad} PSD violations, endpoint equal: {same}")))
}

fn advection_check() -> Result<(bool, String)> {
    let modes = ModeSet::build(3)?;
    let params = FlowParams::eddy(&modes, 0.5, 0.1);
    let mut rng = rng_from_seed(9);
    let init = sample_equilibrium(&params, &modes, &mut rng);
    let flow = simulate_flow(&params, &modes, &init, (0.0, 1.0), 1e-3, 10)?;
    let starts = uniform_initial_positions(8, 11);
    let shifted: Vec<_> = starts.iter().map(|p| [p[0] + 4.0 * PI, p[1] - 2.0 * PI]).collect();
    let a = advect(&flow, &modes, &params, &starts, (0.0, 1.0), 1e-3, 12, true)?;
    let b = advect(&flow, &modes, &params, &shifted, (0.0, 1.0), 1e-3, 12, true)?;
    let mut worst = 0.0f64;
    for d in 0..a.n_drifters() {
        for n in 0..a.n_times() {
            worst = worst.max(torus_distance(a.position(d, n), b.position(d, n)));
        }
    }
    Ok((worst < 1e-9, format!("max shifted-start discrepancy {worst:.2e}")))
}

fn plan_check() -> Result<(bool, String)> {
    let mut rng = rng_from_seed(13);
    let grid = Grid::new(32)?;
    let mut violations = 0;
    for trial in 0..20u64 {
        let values = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        let map = CostMap::new(
            grid,
            values,
            MapProvenance {
                kind: MapKind::Surrogate,
                realizations: 1,
                window: [0.0, 1.0],
                t_star: 0.5,
            },
        )?;
        let existing = uniform_initial_positions(10, trial);
        violations += select_all_at_once(&map, &existing, 4, 1.0)?.distance_violations(&existing);
        violations += random_plan(4, 1.0, &existing, trial, true)?.distance_violations(&existing);
    }
    Ok((violations == 0, format!("{violations} distance violations over 40 plans")))
}

/// A real-time configuration small enough for smoke tests.
pub fn tiny_realtime_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::realtime_preset();
    cfg.flow.kmax = 2;
    cfg.l1 = 4;
    cfg.l2 = 2;
    cfg.t_obs = Some(0.2);
    cfg.tau = 0.1;
    cfg.dt = 1e-2;
    cfg.grid = 8;
    cfg.ensemble = 3;
    cfg.n_experiments = 1;
    cfg.random_with_distance = 3;
    cfg.random_without_distance = 3;
    cfg.single_random_with_distance = 3;
    cfg.single_random_without_distance = 3;
    cfg
}

/// A reanalysis configuration small enough for smoke tests.
pub fn tiny_reanalysis_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reanalysis_preset();
    cfg.flow.kmax = 2;
    cfg.l1 = 4;
    cfg.l2 = 2;
    cfg.t_star = Some(0.3);
    cfg.tau = 0.1;
    cfg.dt = 1e-2;
    cfg.grid = 8;
    cfg.ensemble = 3;
    cfg.n_experiments = 2;
    cfg.random_with_distance = 3;
    cfg.random_without_distance = 3;
    cfg.min_distance = 1.0;
    cfg
}

fn determinism_check() -> Result<(bool, String)> {
    let mut same = true;
    let mut bytes = 0;
    for cfg in [tiny_realtime_config(), tiny_reanalysis_config()] {
        let a = run_experiment(&cfg, 0)?.report.to_json();
        let b = run_experiment(&cfg, 0)?.report.to_json();
        same &= a == b;
        bytes += a.len();
    }
    Ok((same, format!("{bytes} report bytes over both scenarios, identical: {same}")))
}

/// Runs the quick battery: Gaussian KL against quadrature, KL invariance and
/// nonnegativity, OU equilibrium and incompressibility, DA PSD and endpoint
/// agreement, advection wrap invariance, plan distance constraints and
/// end-to-end determinism.
pub fn quick_battery() -> Vec<Check> {
    vec![
        Check::from_result("kl_quadrature", kl_check()),
        Check::from_result("kl_invariance", kl_invariance_check()),
        Check::from_result("ou_equilibrium", ou_check()),
        Check::from_result("da_psd_endpoint", da_check()),
        Check::from_result("advection_wrap", advection_check()),
        Check::from_result("plan_distance", plan_check()),
        Check::from_result("determinism", determinism_check()),
    ]
}
