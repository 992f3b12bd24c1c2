//! Conditional-Gaussian Lagrangian data assimilation.
//!
//! Given drifter paths `X`, the coupled system
//!
//! ```text
//! dX = A(X) U dt + σ_x dW_X
//! dU = (F_U + Λ U) dt + Σ_U dW_U
//! ```
//!
//! is linear in the flow state `U`, so the filter and smoother posteriors are
//! Gaussian with closed-form moments. Everything here works on the real
//! augmented state: the real and imaginary parts of each canonical pair
//! coefficient, stacked pair by pair.

mod filter;
mod sampler;
mod smoother;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::flow::{FlowParams, ModeSet};
use crate::linalg;
use crate::{Error, Point, Result};

pub use filter::filter;
pub use sampler::backward_sample;
pub use smoother::smoother;

/// Drifter noise below this level makes the filter gain singular.
pub const MIN_SIGMA_X: f64 = 1e-6;

/// Relative tolerance used by the PSD checks.
pub const PSD_TOL: f64 = 1e-10;

/// Real augmented coordinates of the flow state.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedState<'a> {
    modes: &'a ModeSet,
}

impl<'a> AugmentedState<'a> {
    pub fn new(modes: &'a ModeSet) -> Self {
        Self { modes }
    }

    pub fn dim(&self) -> usize {
        self.modes.state_dim()
    }

    /// Slots `(re, im)` of the pair containing mode `i`.
    pub fn slots(&self, i: usize) -> (usize, usize) {
        let p = self.modes.pair_of(i);
        (2 * p, 2 * p + 1)
    }

    pub fn augment(&self, coeffs: &[Complex64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (p, &i) in self.modes.representatives().iter().enumerate() {
            v[2 * p] = coeffs[i].re;
            v[2 * p + 1] = coeffs[i].im;
        }
        v
    }

    pub fn complexify(&self, v: &DVector<f64>) -> Vec<Complex64> {
        let mut c = vec![Complex64::new(0.0, 0.0); self.modes.len()];
        for (p, &i) in self.modes.representatives().iter().enumerate() {
            let z = Complex64::new(v[2 * p], v[2 * p + 1]);
            c[i] = z;
            c[self.modes.conjugate_of(i)] = z.conj();
        }
        c
    }
}

/// Time-indexed Gaussian over the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

impl GaussianPosterior {
    pub fn single(t: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            times: vec![t],
            mean: vec![mean],
            cov: vec![cov],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.first().map_or(0, |m| m.len())
    }

    /// The distribution at index `n` as a one-time posterior.
    pub fn at(&self, n: usize) -> GaussianPosterior {
        GaussianPosterior::single(self.times[n], self.mean[n].clone(), self.cov[n].clone())
    }

    pub fn last(&self) -> GaussianPosterior {
        self.at(self.len() - 1)
    }

    /// Restamps a single-time posterior at time `t`.
    pub fn at_time(mut self, t: f64) -> Self {
        for time in &mut self.times {
            *time = t;
        }
        self
    }

    /// Number of stored covariances failing the PSD check.
    pub fn psd_violations(&self) -> usize {
        self.cov.iter().filter(|c| !linalg::is_psd(c, PSD_TOL)).count()
    }

    pub fn traces(&self) -> Vec<f64> {
        self.cov.iter().map(linalg::trace).collect()
    }

    /// Table with one row per time: time, mean components, then the lower
    /// triangle of the covariance in row-major order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let dim = self.dim();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend((0..dim).map(|i| format!("mean_{i}")));
        for i in 0..dim {
            for j in 0..=i {
                header.push(format!("cov_{i}_{j}"));
            }
        }
        wtr.write_record(&header)?;
        for n in 0..self.len() {
            let mut row = Vec::with_capacity(header.len());
            row.push(self.times[n]);
            row.extend(self.mean[n].iter().copied());
            for i in 0..dim {
                for j in 0..=i {
                    row.push(self.cov[n][(i, j)]);
                }
            }
            wtr.serialize(row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn manifest(&self, provenance: impl Into<String>) -> PosteriorManifest {
        let dt = if self.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        };
        PosteriorManifest {
            dt,
            dimension: self.dim(),
            n_times: self.len(),
            t_start: self.times.first().copied().unwrap_or(0.0),
            provenance: provenance.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorManifest {
    pub dt: f64,
    pub dimension: usize,
    pub n_times: usize,
    pub t_start: f64,
    pub provenance: String,
}

/// Block-diagonal OU dynamics in augmented coordinates: `Λ`, `F_U` and the
/// diagonal of `Σ_U Σ_Uᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct LinearModel {
    /// Per pair `[a, b; c, e]` row-major, the 2×2 block of `Λ`.
    blocks: Vec<[f64; 4]>,
    pub forcing: DVector<f64>,
    pub noise_var: DVector<f64>,
}

impl LinearModel {
    pub fn new(params: &FlowParams, modes: &ModeSet) -> Self {
        let dim = modes.state_dim();
        let mut blocks = Vec::with_capacity(modes.n_pairs());
        let mut forcing = DVector::zeros(dim);
        let mut noise_var = DVector::zeros(dim);
        for (p, &i) in modes.representatives().iter().enumerate() {
            let d = params.damping[i];
            let w = params.omega[i];
            blocks.push([-d, -w, w, -d]);
            forcing[2 * p] = params.forcing[i].re;
            forcing[2 * p + 1] = params.forcing[i].im;
            // total complex intensity σ² split over the two components
            let q = 0.5 * params.noise[i] * params.noise[i];
            noise_var[2 * p] = q;
            noise_var[2 * p + 1] = q;
        }
        Self {
            blocks,
            forcing,
            noise_var,
        }
    }

    pub fn dim(&self) -> usize {
        self.forcing.len()
    }

    /// Dense `Λ`.
    pub fn drift_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (p, b) in self.blocks.iter().enumerate() {
            m[(2 * p, 2 * p)] = b[0];
            m[(2 * p, 2 * p + 1)] = b[1];
            m[(2 * p + 1, 2 * p)] = b[2];
            m[(2 * p + 1, 2 * p + 1)] = b[3];
        }
        m
    }

    /// `v ← (I + Λ dt) v`.
    pub fn propagate_vec(&self, v: &mut DVector<f64>, dt: f64) {
        for (p, b) in self.blocks.iter().enumerate() {
            let (x, y) = (v[2 * p], v[2 * p + 1]);
            v[2 * p] = x + dt * (b[0] * x + b[1] * y);
            v[2 * p + 1] = y + dt * (b[2] * x + b[3] * y);
        }
    }

    /// `m ← (I + Λ dt) m`.
    pub fn propagate_rows(&self, m: &mut DMatrix<f64>, dt: f64) {
        let ncols = m.ncols();
        for (p, b) in self.blocks.iter().enumerate() {
            for j in 0..ncols {
                let (x, y) = (m[(2 * p, j)], m[(2 * p + 1, j)]);
                m[(2 * p, j)] = x + dt * (b[0] * x + b[1] * y);
                m[(2 * p + 1, j)] = y + dt * (b[2] * x + b[3] * y);
            }
        }
    }

    /// `m ← m (I + Λ dt)ᵀ`.
    pub fn propagate_cols(&self, m: &mut DMatrix<f64>, dt: f64) {
        let nrows = m.nrows();
        for (p, b) in self.blocks.iter().enumerate() {
            for i in 0..nrows {
                let (x, y) = (m[(i, 2 * p)], m[(i, 2 * p + 1)]);
                m[(i, 2 * p)] = x + dt * (b[0] * x + b[1] * y);
                m[(i, 2 * p + 1)] = y + dt * (b[2] * x + b[3] * y);
            }
        }
    }
}

/// Maps the augmented state to the stacked drifter velocities
/// `(u(x_1), v(x_1), …, u(x_L), v(x_L))`.
///
/// Each pair contributes `2 Re(û_k e^{ik·x} r_k)`, which is linear in
/// `(Re û_k, Im û_k)` with coefficients `2 Re(e^{ik·x} r_k)` and
/// `−2 Im(e^{ik·x} r_k)`.
pub fn observation_matrix(
    positions: &[Point],
    modes: &ModeSet,
    eigenvectors: &[[Complex64; 2]],
) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(2 * positions.len(), modes.state_dim());
    fill_observation_matrix(&mut a, positions.iter().copied(), modes, eigenvectors);
    a
}

pub(crate) fn fill_observation_matrix(
    a: &mut DMatrix<f64>,
    positions: impl Iterator<Item = Point>,
    modes: &ModeSet,
    eigenvectors: &[[Complex64; 2]],
) {
    for (l, x) in positions.enumerate() {
        for (p, &i) in modes.representatives().iter().enumerate() {
            let (s, c) = modes.mode(i).phase(x).sin_cos();
            let e = Complex64::new(c, s);
            for comp in 0..2 {
                let w = e * eigenvectors[i][comp];
                a[(2 * l + comp, 2 * p)] = 2.0 * w.re;
                a[(2 * l + comp, 2 * p + 1)] = -2.0 * w.im;
            }
        }
    }
}

pub(crate) fn check_sigma_x(sigma_x: f64) -> Result<()> {
    if !(sigma_x >= MIN_SIGMA_X) {
        return Err(Error::invalid(format!(
            "drifter noise sigma_x = {sigma_x} is below the supported minimum {MIN_SIGMA_X}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{default_eigenvectors, velocity_at, Wavenumber};
    use proptest::prelude::*;

    #[test]
    fn empty_observation_matrix() {
        let set = ModeSet::build(3).unwrap();
        let a = observation_matrix(&[], &set, &default_eigenvectors(&set));
        assert_eq!(a.shape(), (0, 48));
    }

    #[test]
    fn origin_rows_are_folded_eigenvectors() {
        let set = ModeSet::build(2).unwrap();
        let r = default_eigenvectors(&set);
        let a = observation_matrix(&[[0.0, 0.0]], &set, &r);
        for (p, &i) in set.representatives().iter().enumerate() {
            for comp in 0..2 {
                assert_eq!(a[(comp, 2 * p)], 2.0 * r[i][comp].re);
                assert_eq!(a[(comp, 2 * p + 1)], -2.0 * r[i][comp].im);
            }
        }
    }

    #[test]
    fn augmented_round_trip() {
        let set = ModeSet::from_representatives(&[Wavenumber::new(1, 1), Wavenumber::new(-2, 0)]).unwrap();
        let aug = AugmentedState::new(&set);
        let v = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.4]);
        let c = aug.complexify(&v);
        set.check_symmetry(&c).unwrap();
        assert_eq!(aug.augment(&c), v);
    }

    proptest! {
        #[test]
        fn observation_matrix_reproduces_velocity(
            state in prop::collection::vec(-1.0f64..1.0, 24),
            xs in prop::collection::vec((-3.14f64..3.14, -3.14f64..3.14), 1..5),
        ) {
            let set = ModeSet::build(2).unwrap();
            let v = DVector::from_vec(state);
            let r = default_eigenvectors(&set);
            let coeffs = AugmentedState::new(&set).complexify(&v);
            let pts: Vec<Point> = xs.iter().map(|&(a, b)| [a, b]).collect();
            let a = observation_matrix(&pts, &set, &r);
            let stacked = &a * &v;
            for (l, &x) in pts.iter().enumerate() {
                let u = velocity_at(&set, &coeffs, &r, x).unwrap();
                prop_assert!((stacked[2 * l] - u[0]).abs() < 1e-12);
                prop_assert!((stacked[2 * l + 1] - u[1]).abs() < 1e-12);
            }
        }
    }
}
