//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use driftdeploy::da::{self, AugmentedState, GaussianPosterior};
use driftdeploy::flow::{
    equilibrium_distribution, sample_equilibrium, simulate_flow, FlowParams, FlowRealization, ModeSet, Wavenumber,
};
use driftdeploy::rng::rng_from_seed;
use driftdeploy::tracer::{advect, uniform_initial_positions, TrajectorySet};
use driftdeploy::Point;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// A single-pair system with its truth, drifter paths and prior.
pub struct Fixture {
    pub modes: ModeSet,
    pub params: FlowParams,
    pub truth: FlowRealization,
    pub obs: TrajectorySet,
    pub prior: GaussianPosterior,
}

pub struct FixtureSpec {
    pub k: Wavenumber,
    pub damping: f64,
    pub omega: f64,
    pub forcing: Complex64,
    pub noise: f64,
    pub sigma_x: f64,
    pub drifters: usize,
    pub span: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            k: Wavenumber::new(1, 1),
            damping: 0.5,
            omega: 0.0,
            forcing: Complex64::new(0.0, 0.0),
            noise: 0.5,
            sigma_x: 0.2,
            drifters: 1,
            span: 1.0,
            dt: 1e-3,
            seed: 1,
        }
    }
}

pub fn fixture(spec: &FixtureSpec) -> Fixture {
    let modes = ModeSet::from_representatives(&[spec.k]).unwrap();
    let params = FlowParams::homogeneous(&modes, spec.damping, spec.omega, spec.forcing, spec.noise, spec.sigma_x);
    let mut rng = rng_from_seed(spec.seed);
    let init = sample_equilibrium(&params, &modes, &mut rng);
    let truth = simulate_flow(&params, &modes, &init, (0.0, spec.span), spec.dt, spec.seed + 1).unwrap();
    let starts = uniform_initial_positions(spec.drifters, spec.seed + 2);
    let obs = advect(&truth, &modes, &params, &starts, (0.0, spec.span), spec.dt, spec.seed + 3, true).unwrap();
    let prior = equilibrium_distribution(&params, &modes).unwrap();
    Fixture {
        modes,
        params,
        truth,
        obs,
        prior,
    }
}

/// The time-discretized linear-Gaussian system, rebuilt from the parameters:
/// `U_{n+1} = Φ U_n + F dt + N(0, Q dt)`, `ΔX_n = A_n U_n dt + N(0, σ_x² dt)`.
pub struct Discrete {
    pub phi: DMatrix<f64>,
    pub forcing_dt: DVector<f64>,
    pub q_dt: DVector<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub y: Vec<DVector<f64>>,
    pub obs_var: f64,
}

impl Discrete {
    pub fn new(f: &Fixture) -> Self {
        let dt = f.obs.dt;
        let dim = f.modes.state_dim();
        let mut phi = DMatrix::identity(dim, dim);
        let mut forcing_dt = DVector::zeros(dim);
        let mut q_dt = DVector::zeros(dim);
        for (p, &i) in f.modes.representatives().iter().enumerate() {
            let (d, w) = (f.params.damping[i], f.params.omega[i]);
            phi[(2 * p, 2 * p)] -= d * dt;
            phi[(2 * p, 2 * p + 1)] = -w * dt;
            phi[(2 * p + 1, 2 * p)] = w * dt;
            phi[(2 * p + 1, 2 * p + 1)] -= d * dt;
            forcing_dt[2 * p] = f.params.forcing[i].re * dt;
            forcing_dt[2 * p + 1] = f.params.forcing[i].im * dt;
            q_dt[2 * p] = 0.5 * f.params.noise[i].powi(2) * dt;
            q_dt[2 * p + 1] = q_dt[2 * p];
        }
        let l = f.obs.n_drifters();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for n in 0..f.obs.n_times() - 1 {
            a.push(da::observation_matrix(&f.obs.positions_at(n), &f.modes, &f.params.eigenvectors) * dt);
            let mut v = DVector::zeros(2 * l);
            for d in 0..l {
                let inc = f.obs.increment(d, n);
                v[2 * d] = inc[0];
                v[2 * d + 1] = inc[1];
            }
            y.push(v);
        }
        Self {
            phi,
            forcing_dt,
            q_dt,
            a,
            y,
            obs_var: f.params.sigma_x.powi(2) * dt,
        }
    }

    pub fn steps(&self) -> usize {
        self.y.len()
    }
}

/// Smoothing marginals from the joint Gaussian of `(U_0, …, U_N)` given all
/// increments, by one dense Cholesky solve of the full precision matrix.
pub fn dense_smoother(sys: &Discrete, prior: &GaussianPosterior, times: &[usize]) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let dim = sys.phi.nrows();
    let n_steps = sys.steps();
    let total = dim * (n_steps + 1);
    let mut j = DMatrix::zeros(total, total);
    let mut h = DVector::zeros(total);
    let p0_inv = prior.cov[0].clone().try_inverse().unwrap();
    add_block(&mut j, 0, 0, &p0_inv);
    add_vec(&mut h, 0, &(&p0_inv * &prior.mean[0]));
    let w = DMatrix::from_diagonal(&sys.q_dt.map(|q| 1.0 / q));
    let phit_w = sys.phi.transpose() * &w;
    for n in 0..n_steps {
        add_block(&mut j, n, n, &(&phit_w * &sys.phi));
        add_block(&mut j, n + 1, n + 1, &w);
        add_block(&mut j, n, n + 1, &(-&phit_w));
        add_block(&mut j, n + 1, n, &(-(&w * &sys.phi)));
        add_vec(&mut h, n, &(-(&phit_w * &sys.forcing_dt)));
        add_vec(&mut h, n + 1, &(&w * &sys.forcing_dt));
        let a = &sys.a[n];
        add_block(&mut j, n, n, &(a.transpose() * a / sys.obs_var));
        add_vec(&mut h, n, &(a.transpose() * &sys.y[n] / sys.obs_var));
    }
    let chol = j.cholesky().expect("joint precision is positive definite");
    let mean = chol.solve(&h);
    times
        .iter()
        .map(|&n| {
            let mut e = DMatrix::zeros(total, dim);
            for i in 0..dim {
                e[(n * dim + i, i)] = 1.0;
            }
            let cols = chol.solve(&e);
            (
                mean.rows(n * dim, dim).into_owned(),
                cols.rows(n * dim, dim).into_owned(),
            )
        })
        .collect()
}

fn add_block(j: &mut DMatrix<f64>, bi: usize, bj: usize, m: &DMatrix<f64>) {
    let d = m.nrows();
    let mut view = j.view_mut((bi * d, bj * d), (d, d));
    view += m;
}

fn add_vec(h: &mut DVector<f64>, bi: usize, v: &DVector<f64>) {
    let d = v.len();
    let mut view = h.rows_mut(bi * d, d);
    view += v;
}

/// Per-batch weighted mean and per-component variance of a bootstrap
/// particle filter at the requested step indices.
pub struct ParticleEstimate {
    pub means: Vec<Vec<DVector<f64>>>,
    pub vars: Vec<Vec<DVector<f64>>>,
}

pub fn particle_filter(
    sys: &Discrete,
    prior: &GaussianPosterior,
    times: &[usize],
    batches: usize,
    particles: usize,
    seed: u64,
) -> ParticleEstimate {
    let dim = sys.phi.nrows();
    let sqrt_p0 = driftdeploy::linalg::psd_sqrt(&prior.cov[0]);
    let q_sd = sys.q_dt.map(f64::sqrt);
    let mut means = vec![Vec::new(); times.len()];
    let mut vars = vec![Vec::new(); times.len()];
    for b in 0..batches {
        let mut rng = rng_from_seed(seed.wrapping_add(b as u64 * 7919));
        let normal = |rng: &mut driftdeploy::rng::StreamRng| DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut u: Vec<DVector<f64>> = (0..particles).map(|_| &prior.mean[0] + &sqrt_p0 * normal(&mut rng)).collect();
        let mut logw = vec![0.0; particles];
        let record = |n: usize, u: &[DVector<f64>], logw: &[f64], means: &mut Vec<Vec<DVector<f64>>>, vars: &mut Vec<Vec<DVector<f64>>>| {
            if let Some(k) = times.iter().position(|&t| t == n) {
                let w = normalized(logw);
                let mut m = DVector::zeros(dim);
                for (ui, wi) in u.iter().zip(&w) {
                    m += ui * *wi;
                }
                let mut v = DVector::zeros(dim);
                for (ui, wi) in u.iter().zip(&w) {
                    v += (ui - &m).map(|x| x * x) * *wi;
                }
                means[k].push(m);
                vars[k].push(v);
            }
        };
        record(0, &u, &logw, &mut means, &mut vars);
        for n in 0..sys.steps() {
            let a = &sys.a[n];
            for (ui, lw) in u.iter().zip(logw.iter_mut()) {
                let r = &sys.y[n] - a * ui;
                *lw -= r.norm_squared() / (2.0 * sys.obs_var);
            }
            let w = normalized(&logw);
            let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
            if ess < 0.5 * particles as f64 {
                u = systematic_resample(&u, &w, rng.random::<f64>());
                logw.iter_mut().for_each(|x| *x = 0.0);
            }
            for ui in u.iter_mut() {
                let z = normal(&mut rng);
                *ui = &sys.phi * &*ui + &sys.forcing_dt + q_sd.component_mul(&z);
            }
            record(n + 1, &u, &logw, &mut means, &mut vars);
        }
    }
    ParticleEstimate { means, vars }
}

fn normalized(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn systematic_resample(u: &[DVector<f64>], w: &[f64], offset: f64) -> Vec<DVector<f64>> {
    let n = u.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = w[0];
    let mut i = 0;
    for k in 0..n {
        let target = (k as f64 + offset) / n as f64;
        while cum < target && i < n - 1 {
            i += 1;
            cum += w[i];
        }
        out.push(u[i].clone());
    }
    out
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Chi-square goodness-of-fit p-value of `points` against the uniform
/// distribution on an `bins × bins` partition of the torus.
pub fn uniformity_p_value(points: &[Point], bins: usize) -> f64 {
    let mut counts = vec![0usize; bins * bins];
    for p in points {
        let i = (((p[0] + PI) / (2.0 * PI) * bins as f64) as usize).min(bins - 1);
        let j = (((p[1] + PI) / (2.0 * PI) * bins as f64) as usize).min(bins - 1);
        counts[j * bins + i] += 1;
    }
    let expected = points.len() as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    ChiSquared::new((counts.len() - 1) as f64).unwrap().sf(stat)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Empirical moments of the backward samples against the smoother at ten
/// random times, on an informative three-drifter single-pair system.
pub fn sampler_moment_errors(seed: u64, n_samples: usize) -> Vec<(usize, f64, f64)> {
    let f = fixture(&FixtureSpec {
        drifters: 3,
        sigma_x: 0.1,
        forcing: Complex64::new(0.5, 0.25),
        seed,
        ..FixtureSpec::default()
    });
    let kf = da::filter(&f.obs, &f.params, &f.modes, &f.prior).unwrap();
    let ks = da::smoother(&f.obs, &f.params, &f.modes, &kf).unwrap();
    let samples = da::backward_sample(&ks, &kf, &f.params, &f.modes, n_samples, seed + 10).unwrap();
    let aug = AugmentedState::new(&f.modes);
    let mut rng = rng_from_seed(seed + 20);
    (0..10)
        .map(|_| {
            let n = rng.random_range(0..ks.len());
            let xs: Vec<DVector<f64>> = samples.iter().map(|s| aug.augment(&s.coeffs[n])).collect();
            let m = xs.iter().fold(DVector::zeros(2), |acc, x| acc + x) / xs.len() as f64;
            let c = xs.iter().fold(DMatrix::zeros(2, 2), |acc, x| acc + (x - &m) * (x - &m).transpose())
                / (xs.len() - 1) as f64;
            (n, (&m - &ks.mean[n]).norm() / ks.mean[n].norm(), rel_err(&c, &ks.cov[n]))
        })
        .collect()
}
