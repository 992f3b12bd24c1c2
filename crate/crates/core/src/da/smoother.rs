use nalgebra::DMatrix;

use super::filter::Assimilator;
use super::{check_sigma_x, GaussianPosterior};
use crate::flow::{FlowParams, ModeSet};
use crate::linalg::{self, SpdSolver};
use crate::tracer::TrajectorySet;
use crate::{Error, Result};

/// Relative eigenvalue floor applied before inverting the forecast covariance.
const INVERSE_FLOOR: f64 = 1e-10;

/// Smoothing posterior `p(U(t_n) | X(s), s ∈ [t_0, t_N])`, run backward from
/// the filter estimate at the final time.
///
/// Each backward step is the Gaussian recursion
/// `μ_s(n) = μ⁺ + G (μ_s(n+1) − μ(n+1))`,
/// `R_s(n) = R⁺ + G (R_s(n+1) − R(n+1)) Gᵀ`,
/// with `G = R⁺ Φᵀ R(n+1)⁻¹`, where `(μ⁺, R⁺)` is the filter state at `t_n`
/// after absorbing the increment to `t_{n+1}`. In the limit `dt → 0` this is
/// the backward smoother ODE with gain `Λ + Σ_U Σ_Uᵀ R⁻¹`.
pub fn smoother(
    obs: &TrajectorySet,
    params: &FlowParams,
    modes: &ModeSet,
    filter_out: &GaussianPosterior,
) -> Result<GaussianPosterior> {
    params.validate(modes)?;
    check_sigma_x(params.sigma_x)?;
    let n_times = filter_out.len();
    if n_times == 0 || n_times != obs.n_times() {
        return Err(Error::invalid(format!(
            "filter output has {} times but trajectories have {}",
            n_times,
            obs.n_times()
        )));
    }
    if (filter_out.times[0] - obs.time(0)).abs() > 1e-9 * (1.0 + obs.time(0).abs()) {
        return Err(Error::invalid("filter output and trajectories start at different times"));
    }
    let mut step = Assimilator::new(params, modes, obs.dt);
    let dim = modes.state_dim();

    let mut means = vec![filter_out.mean[n_times - 1].clone()];
    let mut covs = vec![filter_out.cov[n_times - 1].clone()];
    for n in (0..n_times - 1).rev() {
        let t = obs.time(n);
        let (upd_mean, upd_cov) = step.update(obs, n, &filter_out.mean[n], &filter_out.cov[n])?;
        let forecast = &filter_out.cov[n + 1];
        let tr = linalg::trace(forecast);
        let solver = SpdSolver::new(forecast, INVERSE_FLOOR * tr)
            .ok_or_else(|| Error::numerical(t, "forecast covariance cannot be regularized"))?;

        // Gᵀ = P⁻¹ Φ R⁺
        let mut gt = upd_cov.clone();
        step.model.propagate_rows(&mut gt, obs.dt);
        solver.solve_mut(&mut gt);
        let g = gt.transpose();

        let next_mean = means.last().unwrap();
        let next_cov = covs.last().unwrap();
        let mean = &upd_mean + &g * (next_mean - &filter_out.mean[n + 1]);
        let diff: DMatrix<f64> = next_cov - forecast;
        let mut cov = &upd_cov + &g * diff * &gt;
        linalg::condition_covariance(&mut cov);
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) || cov.nrows() != dim {
            return Err(Error::numerical(t, "smoother diverged"));
        }
        means.push(mean);
        covs.push(cov);
    }
    means.reverse();
    covs.reverse();
    Ok(GaussianPosterior {
        times: filter_out.times.clone(),
        mean: means,
        cov: covs,
    })
}
