use nalgebra::{DMatrix, DVector};

use super::{check_sigma_x, fill_observation_matrix, GaussianPosterior, LinearModel, PSD_TOL};
use crate::flow::{FlowParams, ModeSet};
use crate::linalg::{self, SpdSolver};
use crate::tracer::TrajectorySet;
use crate::{Error, Result};

/// One assimilation step of the time-discretized coupled system.
///
/// Over a step of length `dt` the drifter increment is
/// `ΔX = A(X_n) U_n dt + σ_x ΔW` and the flow advances by Euler–Maruyama. The
/// update below is the exact Gaussian conditioning on `ΔX`; as `dt → 0` the
/// gain `R Aᵀ (σ_x² + dt A R Aᵀ)⁻¹` tends to the continuous-time gain
/// `σ_x⁻² R Aᵀ`.
pub(crate) struct Assimilator<'a> {
    pub model: LinearModel,
    modes: &'a ModeSet,
    params: &'a FlowParams,
    pub dt: f64,
    obs: DMatrix<f64>,
}

impl<'a> Assimilator<'a> {
    pub fn new(params: &'a FlowParams, modes: &'a ModeSet, dt: f64) -> Self {
        Self {
            model: LinearModel::new(params, modes),
            modes,
            params,
            dt,
            obs: DMatrix::zeros(0, modes.state_dim()),
        }
    }

    /// Conditions `(mean, cov)` at step `n` on the increments `X_{n+1} − X_n`.
    pub fn update(
        &mut self,
        traj: &TrajectorySet,
        n: usize,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let l = traj.n_drifters();
        if l == 0 {
            return Ok((mean.clone(), cov.clone()));
        }
        let dim = self.modes.state_dim();
        if self.obs.nrows() != 2 * l {
            self.obs = DMatrix::zeros(2 * l, dim);
        }
        fill_observation_matrix(
            &mut self.obs,
            (0..l).map(|d| traj.position(d, n)),
            self.modes,
            &self.params.eigenvectors,
        );
        let a = &self.obs;
        let dt = self.dt;
        let sx2 = self.params.sigma_x * self.params.sigma_x;

        let mut innovation = DVector::zeros(2 * l);
        for d in 0..l {
            let inc = traj.increment(d, n);
            innovation[2 * d] = inc[0];
            innovation[2 * d + 1] = inc[1];
        }
        innovation -= (a * mean) * dt;

        // B = A R, S = σ_x² I + dt A R Aᵀ (innovation covariance divided by dt)
        let b = a * cov;
        let mut s = (&b * a.transpose()) * dt;
        for i in 0..2 * l {
            s[(i, i)] += sx2;
        }
        linalg::symmetrize(&mut s);
        let solver = SpdSolver::new(&s, 1e-14 * linalg::trace(&s))
            .ok_or_else(|| Error::numerical(traj.time(n), "innovation covariance is not finite"))?;
        let mut y = b.clone();
        solver.solve_mut(&mut y);
        let new_mean = mean + y.transpose() * innovation;
        let mut new_cov = cov - (b.transpose() * y) * dt;
        linalg::condition_covariance(&mut new_cov);
        Ok((new_mean, new_cov))
    }

    /// `(mean, cov) ← (Φ mean + F dt, Φ cov Φᵀ + Q dt)` with `Φ = I + Λ dt`.
    pub fn predict(&self, mean: &mut DVector<f64>, cov: &mut DMatrix<f64>) {
        let dt = self.dt;
        self.model.propagate_vec(mean, dt);
        mean.axpy(dt, &self.model.forcing, 1.0);
        self.model.propagate_rows(cov, dt);
        self.model.propagate_cols(cov, dt);
        for i in 0..cov.nrows() {
            cov[(i, i)] += self.model.noise_var[i] * dt;
        }
        linalg::condition_covariance(cov);
    }
}

pub(crate) fn check_init(init: &GaussianPosterior, dim: usize) -> Result<()> {
    if init.is_empty() || init.dim() != dim || init.cov[0].shape() != (dim, dim) {
        return Err(Error::invalid(format!(
            "initial distribution must be a single {dim}-dimensional Gaussian"
        )));
    }
    if !linalg::is_psd(&init.cov[0], PSD_TOL) {
        return Err(Error::invalid("initial covariance is not positive semidefinite"));
    }
    Ok(())
}

/// Filtering posterior `p(U(t_n) | X(s ≤ t_n))` on the trajectory time grid.
///
/// `init` is the distribution at the first trajectory time (only its first
/// entry is used). The output at `t_n` has absorbed the increments up to
/// `X_n`; covariances are symmetrized and clipped to PSD after every step.
pub fn filter(
    obs: &TrajectorySet,
    params: &FlowParams,
    modes: &ModeSet,
    init: &GaussianPosterior,
) -> Result<GaussianPosterior> {
    params.validate(modes)?;
    check_sigma_x(params.sigma_x)?;
    let dim = modes.state_dim();
    check_init(init, dim)?;
    let n_times = obs.n_times();
    if n_times == 0 {
        return Err(Error::invalid("trajectory set has no times"));
    }
    let mut step = Assimilator::new(params, modes, obs.dt);
    let mut mean = init.mean[0].clone();
    let mut cov = init.cov[0].clone();
    let mut out = GaussianPosterior {
        times: Vec::with_capacity(n_times),
        mean: Vec::with_capacity(n_times),
        cov: Vec::with_capacity(n_times),
    };
    out.times.push(obs.time(0));
    out.mean.push(mean.clone());
    out.cov.push(cov.clone());
    for n in 0..n_times - 1 {
        let (mut m, mut c) = step.update(obs, n, &mean, &cov)?;
        step.predict(&mut m, &mut c);
        let t = obs.time(n + 1);
        if m.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical(t, "filter diverged"));
        }
        mean = m;
        cov = c;
        out.times.push(t);
        out.mean.push(mean.clone());
        out.cov.push(cov.clone());
    }
    Ok(out)
}
