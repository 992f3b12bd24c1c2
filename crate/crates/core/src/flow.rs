//! Spectral stochastic flow model.
//!
//! The velocity on the doubly periodic domain `[-π, π)²` is a finite Fourier
//! sum `u(x, t) = Σ_k û_k(t) e^{ik·x} r_k`, where each coefficient follows a
//! complex Ornstein–Uhlenbeck process
//! `dû_k = ((−d_k + iω_k) û_k + f_k) dt + σ_k dW_k`.
//! Conjugate modes carry conjugate coefficients so the field stays real.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::da::GaussianPosterior;
use crate::rng::{rng_from_seed, StreamRng};
use crate::{Error, Point, Result};

/// Largest `kmax` handled by the table-driven velocity kernel.
const FAST_KMAX: usize = 16;

/// Conjugate symmetry tolerance (absolute, scaled by coefficient magnitude).
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Wavenumber {
    pub k1: i32,
    pub k2: i32,
}

impl Wavenumber {
    pub const fn new(k1: i32, k2: i32) -> Self {
        Self { k1, k2 }
    }

    pub fn neg(self) -> Self {
        Self::new(-self.k1, -self.k2)
    }

    /// Canonical representative of the pair `{k, −k}`.
    pub fn is_canonical(self) -> bool {
        self.k1 > 0 || (self.k1 == 0 && self.k2 > 0)
    }

    pub fn norm(self) -> f64 {
        ((self.k1 * self.k1 + self.k2 * self.k2) as f64).sqrt()
    }

    pub fn phase(self, x: Point) -> f64 {
        self.k1 as f64 * x[0] + self.k2 as f64 * x[1]
    }
}

/// The wavenumber lattice together with its conjugate-pair structure.
///
/// Modes are sorted lexicographically on `(k1, k2)`. Each independent pair
/// `{k, −k}` owns two slots `(2p, 2p + 1)` of the real augmented state,
/// holding the real and imaginary parts of the canonical coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    kmax: i32,
    modes: Vec<Wavenumber>,
    conjugate: Vec<usize>,
    representatives: Vec<usize>,
    pair_of: Vec<usize>,
}

impl ModeSet {
    /// Full lattice `−kmax ≤ k1, k2 ≤ kmax` without the zero mode.
    pub fn build(kmax: i32) -> Result<Self> {
        if kmax < 1 {
            return Err(Error::invalid(format!("kmax must be at least 1, got {kmax}")));
        }
        let mut reps = Vec::new();
        for k1 in -kmax..=kmax {
            for k2 in -kmax..=kmax {
                let k = Wavenumber::new(k1, k2);
                if k.is_canonical() {
                    reps.push(k);
                }
            }
        }
        let mut set = Self::from_representatives(&reps)?;
        set.kmax = kmax;
        Ok(set)
    }

    /// A mode set made of the given pairs; each entry may be either member of
    /// its pair.
    pub fn from_representatives(pairs: &[Wavenumber]) -> Result<Self> {
        let mut modes = Vec::with_capacity(2 * pairs.len());
        for &k in pairs {
            if k == Wavenumber::new(0, 0) {
                return Err(Error::invalid("the zero wavenumber is not a flow mode"));
            }
            modes.push(k);
            modes.push(k.neg());
        }
        modes.sort();
        let before = modes.len();
        modes.dedup();
        if modes.len() != before {
            return Err(Error::invalid("duplicate wavenumber pair"));
        }
        if modes.is_empty() {
            return Err(Error::invalid("mode set must contain at least one pair"));
        }
        let conjugate = modes
            .iter()
            .map(|k| modes.binary_search(&k.neg()).expect("conjugate present"))
            .collect::<Vec<_>>();
        let representatives = (0..modes.len())
            .filter(|&i| modes[i].is_canonical())
            .collect::<Vec<_>>();
        let mut pair_of = vec![0; modes.len()];
        for (p, &i) in representatives.iter().enumerate() {
            pair_of[i] = p;
            pair_of[conjugate[i]] = p;
        }
        let kmax = modes
            .iter()
            .map(|k| k.k1.abs().max(k.k2.abs()))
            .max()
            .unwrap_or(0);
        Ok(Self {
            kmax,
            modes,
            conjugate,
            representatives,
            pair_of,
        })
    }

    pub fn kmax(&self) -> i32 {
        self.kmax
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Wavenumber] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> Wavenumber {
        self.modes[i]
    }

    pub fn index_of(&self, k: Wavenumber) -> Option<usize> {
        self.modes.binary_search(&k).ok()
    }

    pub fn conjugate_of(&self, i: usize) -> usize {
        self.conjugate[i]
    }

    /// Mode indices of the canonical pair representatives, in mode order.
    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    pub fn n_pairs(&self) -> usize {
        self.representatives.len()
    }

    pub fn pair_of(&self, i: usize) -> usize {
        self.pair_of[i]
    }

    /// Dimension of the real augmented state.
    pub fn state_dim(&self) -> usize {
        2 * self.n_pairs()
    }

    /// True if the mode set is the full lattice for its `kmax`.
    pub fn is_full_lattice(&self) -> bool {
        let side = 2 * self.kmax as usize + 1;
        self.len() == side * side - 1
    }

    /// Checks `û_{−k} = conj(û_k)` for every mode.
    pub fn check_symmetry(&self, coeffs: &[Complex64]) -> Result<()> {
        if coeffs.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                self.len(),
                coeffs.len()
            )));
        }
        for &i in &self.representatives {
            let c = coeffs[i];
            let cj = coeffs[self.conjugate[i]];
            let scale = 1.0 + c.norm();
            if (c - cj.conj()).norm() > SYMMETRY_TOL * scale {
                return Err(Error::InconsistentState(format!(
                    "coefficients of {:?} and its conjugate are not conjugate",
                    self.modes[i]
                )));
            }
        }
        Ok(())
    }
}

/// Per-mode OU parameters, drifter noise and polarization vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub damping: Vec<f64>,
    pub omega: Vec<f64>,
    pub forcing: Vec<Complex64>,
    pub noise: Vec<f64>,
    pub sigma_x: f64,
    pub eigenvectors: Vec<[Complex64; 2]>,
}

impl FlowParams {
    /// Same damping, noise and forcing for every pair. `omega` and `forcing`
    /// are those of the canonical representative; conjugates get `−omega` and
    /// `conj(forcing)`.
    pub fn homogeneous(
        modes: &ModeSet,
        damping: f64,
        omega: f64,
        forcing: Complex64,
        noise: f64,
        sigma_x: f64,
    ) -> Self {
        let n = modes.len();
        let mut params = Self {
            damping: vec![damping; n],
            omega: vec![0.0; n],
            forcing: vec![Complex64::new(0.0, 0.0); n],
            noise: vec![noise; n],
            sigma_x,
            eigenvectors: default_eigenvectors(modes),
        };
        for &i in modes.representatives() {
            let j = modes.conjugate_of(i);
            params.omega[i] = omega;
            params.omega[j] = -omega;
            params.forcing[i] = forcing;
            params.forcing[j] = forcing.conj();
        }
        params
    }

    /// Parameters used throughout the experiments: `d = 0.5`, `ω = 0`,
    /// `f = 0`, with the given noise level.
    pub fn eddy(modes: &ModeSet, noise: f64, sigma_x: f64) -> Self {
        Self::homogeneous(modes, 0.5, 0.0, Complex64::new(0.0, 0.0), noise, sigma_x)
    }

    pub fn validate(&self, modes: &ModeSet) -> Result<()> {
        let n = modes.len();
        if self.damping.len() != n
            || self.omega.len() != n
            || self.forcing.len() != n
            || self.noise.len() != n
            || self.eigenvectors.len() != n
        {
            return Err(Error::invalid("parameter arrays do not match the mode set"));
        }
        if !(self.sigma_x >= 0.0) {
            return Err(Error::invalid("sigma_x must be nonnegative"));
        }
        for i in 0..n {
            let j = modes.conjugate_of(i);
            let k = modes.mode(i);
            if self.damping[i] <= 0.0 || !self.damping[i].is_finite() {
                return Err(Error::invalid(format!("damping of {k:?} must be positive")));
            }
            if !(self.noise[i] >= 0.0) {
                return Err(Error::invalid(format!("noise of {k:?} must be nonnegative")));
            }
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
            if !close(self.damping[i], self.damping[j])
                || !close(self.noise[i], self.noise[j])
                || !close(self.omega[i], -self.omega[j])
                || (self.forcing[i] - self.forcing[j].conj()).norm() > 1e-12
            {
                return Err(Error::InconsistentState(format!(
                    "parameters of {k:?} and its conjugate break reality"
                )));
            }
            let r = self.eigenvectors[i];
            let rj = self.eigenvectors[j];
            if (r[0] - rj[0].conj()).norm() > 1e-12 || (r[1] - rj[1].conj()).norm() > 1e-12 {
                return Err(Error::InconsistentState(format!(
                    "eigenvector of {k:?} is not conjugate to that of its pair"
                )));
            }
        }
        Ok(())
    }

    pub fn to_document(&self, modes: &ModeSet) -> FlowParamsDocument {
        FlowParamsDocument {
            kmax: modes.kmax(),
            modes: if modes.is_full_lattice() {
                None
            } else {
                Some(modes.representatives().iter().map(|&i| modes.mode(i)).collect())
            },
            d: self.damping.clone(),
            omega: self.omega.clone(),
            f_re: self.forcing.iter().map(|f| f.re).collect(),
            f_im: self.forcing.iter().map(|f| f.im).collect(),
            sigma: self.noise.clone(),
            sigma_x: self.sigma_x,
        }
    }

    /// Rebuilds mode set and parameters, using the default eigenvectors.
    pub fn from_document(doc: &FlowParamsDocument) -> Result<(ModeSet, FlowParams)> {
        let modes = match &doc.modes {
            Some(pairs) => ModeSet::from_representatives(pairs)?,
            None => ModeSet::build(doc.kmax)?,
        };
        let n = modes.len();
        for (name, len) in [
            ("d", doc.d.len()),
            ("omega", doc.omega.len()),
            ("f_re", doc.f_re.len()),
            ("f_im", doc.f_im.len()),
            ("sigma", doc.sigma.len()),
        ] {
            if len != n {
                return Err(Error::invalid(format!("`{name}` has {len} entries, expected {n}")));
            }
        }
        let params = FlowParams {
            damping: doc.d.clone(),
            omega: doc.omega.clone(),
            forcing: doc
                .f_re
                .iter()
                .zip(&doc.f_im)
                .map(|(&re, &im)| Complex64::new(re, im))
                .collect(),
            noise: doc.sigma.clone(),
            sigma_x: doc.sigma_x,
            eigenvectors: default_eigenvectors(&modes),
        };
        params.validate(&modes)?;
        Ok((modes, params))
    }
}

/// JSON form of a mode set and its parameters. Arrays follow mode order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParamsDocument {
    pub kmax: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Wavenumber>>,
    pub d: Vec<f64>,
    pub omega: Vec<f64>,
    pub f_re: Vec<f64>,
    pub f_im: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_x: f64,
}

/// Incompressible polarization `r_k = i (−k2, k1) / |k|`.
pub fn default_eigenvectors(modes: &ModeSet) -> Vec<[Complex64; 2]> {
    modes
        .modes()
        .iter()
        .map(|k| {
            let n = k.norm();
            [
                Complex64::new(0.0, -k.k2 as f64 / n),
                Complex64::new(0.0, k.k1 as f64 / n),
            ]
        })
        .collect()
}

/// Evaluates the velocity by direct summation over every mode.
///
/// The imaginary part of the sum must vanish; a residual above `1e-10`
/// (relative to the field magnitude) means the coefficients are not
/// conjugate-symmetric.
pub fn velocity_at(
    modes: &ModeSet,
    coeffs: &[Complex64],
    eigenvectors: &[[Complex64; 2]],
    x: Point,
) -> Result<Point> {
    let mut sum = [Complex64::new(0.0, 0.0); 2];
    let mut scale = 0.0;
    for (i, k) in modes.modes().iter().enumerate() {
        let (s, c) = k.phase(x).sin_cos();
        let term = coeffs[i] * Complex64::new(c, s);
        let r = eigenvectors[i];
        sum[0] += term * r[0];
        sum[1] += term * r[1];
        scale += coeffs[i].norm() * (r[0].norm() + r[1].norm());
    }
    let tol = 1e-10 * scale.max(1.0);
    if sum[0].im.abs() > tol || sum[1].im.abs() > tol {
        return Err(Error::InconsistentState(format!(
            "velocity has imaginary residual ({:.3e}, {:.3e})",
            sum[0].im, sum[1].im
        )));
    }
    Ok([sum[0].re, sum[1].re])
}

#[derive(Debug, Clone, Copy)]
struct KernelTerm {
    k1: i32,
    k2: i32,
    wu: Complex64,
    wv: Complex64,
}

/// Velocity evaluator for a fixed coefficient vector, summing over pair
/// representatives only: `u(x) = Σ_rep 2 Re(û_k e^{ik·x} r_k)`.
#[derive(Debug, Clone)]
pub struct VelocityKernel {
    kmax: usize,
    terms: Vec<KernelTerm>,
}

impl VelocityKernel {
    pub fn new(modes: &ModeSet, coeffs: &[Complex64], eigenvectors: &[[Complex64; 2]]) -> Self {
        let terms = modes
            .representatives()
            .iter()
            .map(|&i| {
                let k = modes.mode(i);
                let c = coeffs[i] * 2.0;
                KernelTerm {
                    k1: k.k1,
                    k2: k.k2,
                    wu: c * eigenvectors[i][0],
                    wv: c * eigenvectors[i][1],
                }
            })
            .collect();
        Self {
            kmax: modes.kmax().max(0) as usize,
            terms,
        }
    }

    pub fn zero() -> Self {
        Self {
            kmax: 0,
            terms: Vec::new(),
        }
    }

    #[inline]
    pub fn eval(&self, x: Point) -> Point {
        if self.kmax > FAST_KMAX {
            return self.eval_direct(x);
        }
        let km = self.kmax;
        let mut ex = [Complex64::new(1.0, 0.0); FAST_KMAX + 1];
        let mut ey = [Complex64::new(1.0, 0.0); 2 * FAST_KMAX + 1];
        let (sx, cx) = x[0].sin_cos();
        let (sy, cy) = x[1].sin_cos();
        let bx = Complex64::new(cx, sx);
        let by = Complex64::new(cy, sy);
        for n in 1..=km {
            ex[n] = ex[n - 1] * bx;
            ey[km + n] = ey[km + n - 1] * by;
            ey[km - n] = ey[km + n].conj();
        }
        let (mut u, mut v) = (0.0, 0.0);
        for t in &self.terms {
            // k1 ≥ 0 for canonical representatives
            let p = ex[t.k1 as usize] * ey[(km as i32 + t.k2) as usize];
            u += t.wu.re * p.re - t.wu.im * p.im;
            v += t.wv.re * p.re - t.wv.im * p.im;
        }
        [u, v]
    }

    /// Evaluates the field at many points held as separate coordinate arrays.
    /// Same values as [`eval`](Self::eval), laid out for vectorization.
    pub fn eval_many(&self, xs: &[f64], ys: &[f64], u: &mut [f64], v: &mut [f64], scratch: &mut KernelScratch) {
        let n = xs.len();
        assert!(ys.len() == n && u.len() == n && v.len() == n);
        let km = self.kmax;
        if self.terms.is_empty() || km == 0 {
            u.fill(0.0);
            v.fill(0.0);
            return;
        }
        let s = scratch;
        s.resize(km, n);
        for p in 0..n {
            let (sx, cx) = xs[p].sin_cos();
            let (sy, cy) = ys[p].sin_cos();
            s.ex_re[n + p] = cx;
            s.ex_im[n + p] = sx;
            s.ey_re[(km + 1) * n + p] = cy;
            s.ey_im[(km + 1) * n + p] = sy;
        }
        for k in 2..=km {
            let (prev, cur) = (k - 1, k);
            for p in 0..n {
                let (ar, ai) = (s.ex_re[prev * n + p], s.ex_im[prev * n + p]);
                let (br, bi) = (s.ex_re[n + p], s.ex_im[n + p]);
                s.ex_re[cur * n + p] = ar * br - ai * bi;
                s.ex_im[cur * n + p] = ar * bi + ai * br;
                let (ar, ai) = (s.ey_re[(km + prev) * n + p], s.ey_im[(km + prev) * n + p]);
                let (br, bi) = (s.ey_re[(km + 1) * n + p], s.ey_im[(km + 1) * n + p]);
                s.ey_re[(km + cur) * n + p] = ar * br - ai * bi;
                s.ey_im[(km + cur) * n + p] = ar * bi + ai * br;
            }
        }
        for k in 1..=km {
            for p in 0..n {
                s.ey_re[(km - k) * n + p] = s.ey_re[(km + k) * n + p];
                s.ey_im[(km - k) * n + p] = -s.ey_im[(km + k) * n + p];
            }
        }
        u.fill(0.0);
        v.fill(0.0);
        for t in &self.terms {
            let a = t.k1 as usize * n;
            let b = (km as i32 + t.k2) as usize * n;
            let (exr, exi) = (&s.ex_re[a..a + n], &s.ex_im[a..a + n]);
            let (eyr, eyi) = (&s.ey_re[b..b + n], &s.ey_im[b..b + n]);
            let (wur, wui, wvr, wvi) = (t.wu.re, t.wu.im, t.wv.re, t.wv.im);
            for p in 0..n {
                let pr = exr[p] * eyr[p] - exi[p] * eyi[p];
                let pi = exr[p] * eyi[p] + exi[p] * eyr[p];
                u[p] += wur * pr - wui * pi;
                v[p] += wvr * pr - wvi * pi;
            }
        }
    }

    fn eval_direct(&self, x: Point) -> Point {
        let (mut u, mut v) = (0.0, 0.0);
        for t in &self.terms {
            let (s, c) = (t.k1 as f64 * x[0] + t.k2 as f64 * x[1]).sin_cos();
            u += t.wu.re * c - t.wu.im * s;
            v += t.wv.re * c - t.wv.im * s;
        }
        [u, v]
    }
}

/// Reusable buffers for [`VelocityKernel::eval_many`].
#[derive(Debug, Clone, Default)]
pub struct KernelScratch {
    ex_re: Vec<f64>,
    ex_im: Vec<f64>,
    ey_re: Vec<f64>,
    ey_im: Vec<f64>,
}

impl KernelScratch {
    fn resize(&mut self, km: usize, n: usize) {
        let nx = (km + 1) * n;
        let ny = (2 * km + 1) * n;
        self.ex_re.resize(nx, 0.0);
        self.ex_im.resize(nx, 0.0);
        self.ey_re.resize(ny, 0.0);
        self.ey_im.resize(ny, 0.0);
        self.ex_re[..n].fill(1.0);
        self.ex_im[..n].fill(0.0);
        self.ey_re[km * n..(km + 1) * n].fill(1.0);
        self.ey_im[km * n..(km + 1) * n].fill(0.0);
    }
}

/// One sample path of the spectral coefficients on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRealization {
    pub t0: f64,
    pub dt: f64,
    /// `coeffs[n][i]` is `û_i(t0 + n dt)`.
    pub coeffs: Vec<Vec<Complex64>>,
}

impl FlowRealization {
    pub fn n_steps(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.coeffs.len()).map(|n| self.time(n)).collect()
    }

    /// Index of the knot at or before `t` (zero-order hold), clamped to the
    /// stored span.
    pub fn knot_at(&self, t: f64) -> usize {
        let s = ((t - self.t0) / self.dt + 1e-7).floor();
        (s.max(0.0) as usize).min(self.n_steps())
    }

    pub fn covers(&self, t_from: f64, t_to: f64) -> bool {
        let tol = 1e-9 * (1.0 + self.t_end().abs()) + 1e-6 * self.dt;
        t_from.min(t_to) >= self.t0 - tol && t_from.max(t_to) <= self.t_end() + tol
    }

    pub fn check_symmetry(&self, modes: &ModeSet) -> Result<()> {
        self.coeffs.iter().try_for_each(|c| modes.check_symmetry(c))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "mode", "re", "im"])?;
        for (n, c) in self.coeffs.iter().enumerate() {
            let t = self.time(n);
            for (i, z) in c.iter().enumerate() {
                wtr.serialize((t, i, z.re, z.im))?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, n_modes: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut times = Vec::new();
        let mut coeffs: Vec<Vec<Complex64>> = Vec::new();
        for row in rdr.deserialize() {
            let (t, i, re, im): (f64, usize, f64, f64) = row?;
            if i == 0 {
                times.push(t);
                coeffs.push(vec![Complex64::new(0.0, 0.0); n_modes]);
            }
            let last = coeffs
                .last_mut()
                .filter(|_| i < n_modes)
                .ok_or_else(|| Error::invalid("malformed flow realization table"))?;
            last[i] = Complex64::new(re, im);
        }
        if times.len() < 2 {
            return Err(Error::invalid("flow realization needs at least two times"));
        }
        Ok(Self {
            t0: times[0],
            dt: times[1] - times[0],
            coeffs,
        })
    }
}

/// Euler–Maruyama integrator for the OU coefficients, one independent pair
/// at a time; conjugates are filled by symmetry.
pub struct FlowStepper<'a> {
    modes: &'a ModeSet,
    params: &'a FlowParams,
    state: Vec<Complex64>,
    rng: StreamRng,
}

impl<'a> FlowStepper<'a> {
    pub fn new(
        modes: &'a ModeSet,
        params: &'a FlowParams,
        init: Vec<Complex64>,
        seed: u64,
    ) -> Result<Self> {
        params.validate(modes)?;
        modes
            .check_symmetry(&init)
            .map_err(|e| Error::invalid(format!("initial condition: {e}")))?;
        Ok(Self {
            modes,
            params,
            state: init,
            rng: rng_from_seed(seed),
        })
    }

    pub fn state(&self) -> &[Complex64] {
        &self.state
    }

    pub fn step(&mut self, dt: f64) -> &[Complex64] {
        let sqdt = dt.sqrt();
        for &i in self.modes.representatives() {
            let drift = Complex64::new(-self.params.damping[i], self.params.omega[i]);
            let amp = self.params.noise[i] * std::f64::consts::FRAC_1_SQRT_2 * sqdt;
            let z_re: f64 = self.rng.sample(StandardNormal);
            let z_im: f64 = self.rng.sample(StandardNormal);
            let u = self.state[i];
            let next = u + (drift * u + self.params.forcing[i]) * dt + Complex64::new(z_re, z_im) * amp;
            self.state[i] = next;
            self.state[self.modes.conjugate_of(i)] = next.conj();
        }
        &self.state
    }
}

/// Number of uniform steps of size `dt` spanning `length`, requiring the ratio
/// to be an integer.
pub(crate) fn step_count(length: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if !(length >= 0.0) {
        return Err(Error::invalid(format!("time span must be nonnegative, got {length}")));
    }
    let ratio = length / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::invalid(format!(
            "span {length} is not a whole number of steps of {dt}"
        )));
    }
    Ok(n as usize)
}

/// Simulates the coefficients over `t_span` with Euler–Maruyama.
pub fn simulate_flow(
    params: &FlowParams,
    modes: &ModeSet,
    init: &[Complex64],
    t_span: (f64, f64),
    dt: f64,
    seed: u64,
) -> Result<FlowRealization> {
    let n = step_count(t_span.1 - t_span.0, dt)?;
    let mut stepper = FlowStepper::new(modes, params, init.to_vec(), seed)?;
    let mut coeffs = Vec::with_capacity(n + 1);
    coeffs.push(stepper.state().to_vec());
    for _ in 0..n {
        coeffs.push(stepper.step(dt).to_vec());
    }
    Ok(FlowRealization {
        t0: t_span.0,
        dt,
        coeffs,
    })
}

/// Per-mode stationary statistics of the OU model, in the augmented state
/// layout: mean `f/(d − iω)`, complex variance `σ²/(2d)` split evenly over
/// real and imaginary parts.
pub fn equilibrium_distribution(params: &FlowParams, modes: &ModeSet) -> Result<GaussianPosterior> {
    if params.damping.len() != modes.len() {
        return Err(Error::invalid("parameter arrays do not match the mode set"));
    }
    let dim = modes.state_dim();
    let mut mean = nalgebra::DVector::zeros(dim);
    let mut cov = nalgebra::DMatrix::zeros(dim, dim);
    for (p, &i) in modes.representatives().iter().enumerate() {
        let d = params.damping[i];
        if !(d > 0.0) {
            return Err(Error::invalid(format!(
                "damping of {:?} must be positive for an equilibrium",
                modes.mode(i)
            )));
        }
        let m = params.forcing[i] / Complex64::new(d, -params.omega[i]);
        mean[2 * p] = m.re;
        mean[2 * p + 1] = m.im;
        let var = params.noise[i] * params.noise[i] / (4.0 * d);
        cov[(2 * p, 2 * p)] = var;
        cov[(2 * p + 1, 2 * p + 1)] = var;
    }
    Ok(GaussianPosterior::single(0.0, mean, cov))
}

/// Draws one coefficient vector from the equilibrium distribution.
pub fn sample_equilibrium(params: &FlowParams, modes: &ModeSet, rng: &mut StreamRng) -> Vec<Complex64> {
    let mut coeffs = vec![Complex64::new(0.0, 0.0); modes.len()];
    for &i in modes.representatives() {
        let d = params.damping[i];
        let mean = params.forcing[i] / Complex64::new(d, -params.omega[i]);
        let sd = params.noise[i] / (4.0 * d).sqrt();
        let z_re: f64 = rng.sample(StandardNormal);
        let z_im: f64 = rng.sample(StandardNormal);
        let c = mean + Complex64::new(z_re, z_im) * sd;
        coeffs[i] = c;
        coeffs[modes.conjugate_of(i)] = c.conj();
    }
    coeffs
}

/// Wraps a coordinate into `[-π, π)`.
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    let two_pi = 2.0 * PI;
    let mut r = (x + PI).rem_euclid(two_pi);
    if r >= two_pi {
        r -= two_pi;
    }
    r - PI
}

#[inline]
pub fn wrap_point(x: Point) -> Point {
    [wrap_coord(x[0]), wrap_coord(x[1])]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(ModeSet::build(3).unwrap().len(), 48);
        assert_eq!(ModeSet::build(1).unwrap().len(), 8);
        assert!(matches!(ModeSet::build(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lattice_structure() {
        let set = ModeSet::build(3).unwrap();
        assert_eq!(set.n_pairs(), 24);
        assert_eq!(set.state_dim(), 48);
        let modes = set.modes();
        assert!(modes.windows(2).all(|w| w[0] < w[1]));
        for i in 0..set.len() {
            assert_eq!(set.mode(set.conjugate_of(i)), set.mode(i).neg());
            assert_eq!(set.pair_of(i), set.pair_of(set.conjugate_of(i)));
        }
        let mut reps: Vec<_> = set.representatives().iter().map(|&i| set.pair_of(i)).collect();
        reps.dedup();
        assert_eq!(reps, (0..24).collect::<Vec<_>>());
        assert_eq!(ModeSet::build(3).unwrap(), set);
    }

    #[test]
    fn axis_eigenvectors() {
        let set = ModeSet::build(2).unwrap();
        let r = default_eigenvectors(&set);
        let i = set.index_of(Wavenumber::new(1, 0)).unwrap();
        assert_eq!(r[i], [c(0.0, 0.0), c(0.0, 1.0)]);
        let j = set.index_of(Wavenumber::new(0, 2)).unwrap();
        assert_eq!(r[j], [c(0.0, -1.0), c(0.0, 0.0)]);
    }

    #[test]
    fn eigenvectors_are_incompressible_unit_and_conjugate() {
        let set = ModeSet::build(3).unwrap();
        let r = default_eigenvectors(&set);
        for (i, k) in set.modes().iter().enumerate() {
            let div = r[i][0] * k.k1 as f64 + r[i][1] * k.k2 as f64;
            assert!(div.norm() < 1e-14);
            let norm = (r[i][0].norm_sqr() + r[i][1].norm_sqr()).sqrt();
            assert!((norm - 1.0).abs() < 1e-14);
            let j = set.conjugate_of(i);
            assert_eq!(r[j], [r[i][0].conj(), r[i][1].conj()]);
        }
    }

    #[test]
    fn zero_field_is_still() {
        let set = ModeSet::build(3).unwrap();
        let r = default_eigenvectors(&set);
        let zero = vec![c(0.0, 0.0); set.len()];
        for x in [[0.0, 0.0], [1.0, -2.0], [-3.1, 3.1]] {
            assert_eq!(velocity_at(&set, &zero, &r, x).unwrap(), [0.0, 0.0]);
        }
    }

    #[test]
    fn single_pair_matches_conjugate_identity() {
        let set = ModeSet::build(2).unwrap();
        let r = default_eigenvectors(&set);
        let i = set.index_of(Wavenumber::new(1, 2)).unwrap();
        let mut coeffs = vec![c(0.0, 0.0); set.len()];
        let amp = c(0.3, -0.7);
        coeffs[i] = amp;
        coeffs[set.conjugate_of(i)] = amp.conj();
        let kernel = VelocityKernel::new(&set, &coeffs, &r);
        for x in [[0.4, -1.3], [2.0, 3.0], [-3.0, 0.1]] {
            let phase = Complex64::new(0.0, set.mode(i).phase(x)).exp();
            let expect = [
                2.0 * (amp * phase * r[i][0]).re,
                2.0 * (amp * phase * r[i][1]).re,
            ];
            let got = velocity_at(&set, &coeffs, &r, x).unwrap();
            let fast = kernel.eval(x);
            for d in 0..2 {
                assert!((got[d] - expect[d]).abs() < 1e-14);
                assert!((fast[d] - expect[d]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batched_kernel_matches_pointwise() {
        let set = ModeSet::build(3).unwrap();
        let params = FlowParams::eddy(&set, 0.5, 0.1);
        let mut rng = crate::rng::rng_from_seed(11);
        let coeffs = sample_equilibrium(&params, &set, &mut rng);
        let kernel = VelocityKernel::new(&set, &coeffs, &params.eigenvectors);
        let xs: Vec<f64> = (0..37).map(|p| -3.0 + 0.17 * p as f64).collect();
        let ys: Vec<f64> = (0..37).map(|p| 3.1 - 0.13 * p as f64).collect();
        let (mut u, mut v) = (vec![0.0; 37], vec![0.0; 37]);
        let mut scratch = KernelScratch::default();
        kernel.eval_many(&xs, &ys, &mut u, &mut v, &mut scratch);
        for p in 0..37 {
            let w = kernel.eval([xs[p], ys[p]]);
            assert!((w[0] - u[p]).abs() < 1e-12 && (w[1] - v[p]).abs() < 1e-12);
        }
        VelocityKernel::zero().eval_many(&xs, &ys, &mut u, &mut v, &mut scratch);
        assert!(u.iter().chain(&v).all(|&z| z == 0.0));
    }

    #[test]
    fn asymmetric_coefficients_are_rejected() {
        let set = ModeSet::build(1).unwrap();
        let r = default_eigenvectors(&set);
        let mut coeffs = vec![c(0.0, 0.0); set.len()];
        coeffs[set.representatives()[0]] = c(1.0, 0.5);
        let err = velocity_at(&set, &coeffs, &r, [0.3, 0.2]).unwrap_err();
        assert!(matches!(err, Error::InconsistentState(_)));
    }

    #[test]
    fn deterministic_decay() {
        let set = ModeSet::from_representatives(&[Wavenumber::new(1, 0)]).unwrap();
        let params = FlowParams::homogeneous(&set, 0.5, 0.0, c(0.0, 0.0), 0.0, 0.0);
        let init = vec![c(1.0, 0.0); 2];
        let dt = 1e-3;
        let flow = simulate_flow(&params, &set, &init, (0.0, 2.0), dt, 1).unwrap();
        for n in [0, 500, 1000, 2000] {
            let t = flow.time(n);
            let got = flow.coeffs[n][0].re;
            assert!((got - (-0.5 * t).exp()).abs() < dt, "t={t}");
        }
    }

    #[test]
    fn simulation_is_symmetric_and_reproducible() {
        let set = ModeSet::build(2).unwrap();
        let params = FlowParams::eddy(&set, 0.5, 0.1);
        let init = vec![c(0.0, 0.0); set.len()];
        let a = simulate_flow(&params, &set, &init, (0.0, 1.0), 1e-2, 9).unwrap();
        let b = simulate_flow(&params, &set, &init, (0.0, 1.0), 1e-2, 9).unwrap();
        assert_eq!(a, b);
        for coeffs in &a.coeffs {
            for i in 0..set.len() {
                assert_eq!(coeffs[set.conjugate_of(i)], coeffs[i].conj());
            }
        }
        let c2 = simulate_flow(&params, &set, &init, (0.0, 1.0), 1e-2, 10).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn simulation_rejects_bad_input() {
        let set = ModeSet::build(1).unwrap();
        let params = FlowParams::eddy(&set, 0.5, 0.1);
        let mut init = vec![c(0.0, 0.0); set.len()];
        init[set.representatives()[0]] = c(1.0, 1.0);
        assert!(matches!(
            simulate_flow(&params, &set, &init, (0.0, 1.0), 1e-2, 1),
            Err(Error::InvalidArgument(_))
        ));
        let zero = vec![c(0.0, 0.0); set.len()];
        assert!(simulate_flow(&params, &set, &zero, (0.0, 1.0), 0.0, 1).is_err());
    }

    #[test]
    fn equilibrium_moments() {
        let set = ModeSet::build(3).unwrap();
        let params = FlowParams::eddy(&set, 0.5, 0.1);
        let eq = equilibrium_distribution(&params, &set).unwrap();
        assert!(eq.mean[0].iter().all(|&m| m == 0.0));
        for p in 0..48 {
            assert!((eq.cov[0][(p, p)] - 0.125).abs() < 1e-15);
        }
        let forced = FlowParams::homogeneous(&set, 1.0, 0.0, c(1.0, 0.0), 0.5, 0.1);
        let eq = equilibrium_distribution(&forced, &set).unwrap();
        assert!((eq.mean[0][0] - 1.0).abs() < 1e-15);
        assert!(eq.mean[0][1].abs() < 1e-15);
        let mut bad = params.clone();
        bad.damping[set.representatives()[0]] = 0.0;
        assert!(matches!(
            equilibrium_distribution(&bad, &set),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn document_round_trip() {
        let set = ModeSet::build(2).unwrap();
        let params = FlowParams::homogeneous(&set, 0.7, 0.2, c(0.1, -0.3), 0.4, 0.05);
        let doc = params.to_document(&set);
        let json = serde_json::to_string(&doc).unwrap();
        let back: FlowParamsDocument = serde_json::from_str(&json).unwrap();
        let (set2, params2) = FlowParams::from_document(&back).unwrap();
        assert_eq!(set2, set);
        assert_eq!(params2, params);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["kmax", "d", "omega", "f_re", "f_im", "sigma", "sigma_x"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn realization_csv_round_trip() {
        let set = ModeSet::build(1).unwrap();
        let params = FlowParams::eddy(&set, 0.5, 0.1);
        let init = vec![c(0.0, 0.0); set.len()];
        let flow = simulate_flow(&params, &set, &init, (0.0, 0.05), 1e-2, 3).unwrap();
        let mut buf = Vec::new();
        flow.write_csv(&mut buf).unwrap();
        let back = FlowRealization::read_csv(buf.as_slice(), set.len()).unwrap();
        assert_eq!(back.coeffs, flow.coeffs);
        assert!((back.dt - flow.dt).abs() < 1e-15);
    }

    #[test]
    fn wrapping() {
        assert!((wrap_coord(PI) + PI).abs() < 1e-15);
        assert!((wrap_coord(3.0 * PI + 0.5) - (-PI + 0.5)).abs() < 1e-12);
        let w = wrap_coord(-1e-17 - PI);
        assert!((-PI..PI).contains(&w));
    }
}
