//! Relative-entropy information gain of Gaussian posteriors.
//!
//! The gain of a posterior `p = N(μ, R)` against the equilibrium
//! `q = N(μ_m, R_m)` splits into
//!
//! ```text
//! signal     = ½ (μ − μ_m)ᵀ R_m⁻¹ (μ − μ_m)
//! dispersion = −½ log det(R R_m⁻¹) + ½ (tr(R R_m⁻¹) − n)
//! ```
//!
//! All quantities are in nats.

use std::f64::consts::{E, PI};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::da::GaussianPosterior;
use crate::linalg::{floored_log_det, trace};
use crate::{Error, Result};

/// Relative floor for the posterior log-determinant.
pub const LOG_DET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoGain {
    pub total: f64,
    pub signal: f64,
    pub dispersion: f64,
    pub window: [f64; 2],
    pub n_ensemble: usize,
}

impl InfoGain {
    /// Gain with `total = signal + dispersion`.
    pub fn from_parts(signal: f64, dispersion: f64, window: [f64; 2]) -> Self {
        Self {
            total: signal + dispersion,
            signal,
            dispersion,
            window,
            n_ensemble: 1,
        }
    }

    /// Nonnegative up to round-off.
    pub fn is_valid(&self) -> bool {
        self.total.is_finite() && self.total >= -1e-10 && self.signal >= -1e-10
    }
}

/// The reference distribution with its factorization cached, for repeated
/// gains against the same equilibrium.
pub struct Reference {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    floor: f64,
}

impl Reference {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::invalid("reference mean and covariance disagree in size"));
        }
        let chol = Cholesky::new(cov.clone())
            .filter(|c| (0..n).all(|i| c.l_dirty()[(i, i)] > 0.0))
            .ok_or_else(|| Error::invalid("reference covariance is not positive definite"))?;
        let log_det = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::invalid("reference covariance is singular"));
        }
        Ok(Self {
            mean: mean.clone(),
            chol,
            log_det,
            floor: LOG_DET_FLOOR * trace(cov).max(f64::MIN_POSITIVE),
        })
    }

    pub fn from_posterior(q: &GaussianPosterior) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("empty reference distribution"));
        }
        Self::new(&q.mean[0], &q.cov[0])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Gain of `N(mean, cov)` relative to this reference at time `t`.
    pub fn gain(&self, mean: &DVector<f64>, cov: &DMatrix<f64>, t: f64) -> Result<InfoGain> {
        let n = self.dim();
        if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::invalid(format!(
                "dimension mismatch: reference {n}, posterior {}",
                mean.len()
            )));
        }
        let delta = mean - &self.mean;
        let signal = 0.5 * delta.dot(&self.chol.solve(&delta));
        let ratio_trace = trace(&self.chol.solve(cov));
        let log_det_ratio = floored_log_det(cov, self.floor) - self.log_det;
        let dispersion = -0.5 * log_det_ratio + 0.5 * (ratio_trace - n as f64);
        Ok(InfoGain::from_parts(signal.max(0.0), dispersion, [t, t]))
    }
}

/// Closed-form `KL(p ‖ q)` between two Gaussians.
pub fn gaussian_relative_entropy(
    p_mean: &DVector<f64>,
    p_cov: &DMatrix<f64>,
    q_mean: &DVector<f64>,
    q_cov: &DMatrix<f64>,
) -> Result<InfoGain> {
    Reference::new(q_mean, q_cov)?.gain(p_mean, p_cov, 0.0)
}

/// `½ log det(2πe·cov)`; a singular covariance gives `-∞`.
pub fn entropy_gaussian(cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows();
    if n == 0 {
        return 0.0;
    }
    let scaled = cov * (2.0 * PI * E);
    match Cholesky::new(scaled) {
        Some(chol) => {
            let l = chol.l_dirty();
            let mut sum = 0.0;
            for i in 0..n {
                if l[(i, i)] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                sum += l[(i, i)].ln();
            }
            sum
        }
        None => f64::NEG_INFINITY,
    }
}

/// Mean gain over every posterior time in `[a, b]`, endpoints included.
pub fn time_averaged_gain(
    posterior: &GaussianPosterior,
    equilibrium: &GaussianPosterior,
    window: [f64; 2],
) -> Result<InfoGain> {
    let reference = Reference::from_posterior(equilibrium)?;
    time_averaged_gain_with(posterior, &reference, window)
}

pub fn time_averaged_gain_with(
    posterior: &GaussianPosterior,
    reference: &Reference,
    window: [f64; 2],
) -> Result<InfoGain> {
    average_series(&gain_series(posterior, reference, window)?, window)
}

/// Single-time gains at every posterior time in `[a, b]`.
pub fn gain_series(
    posterior: &GaussianPosterior,
    reference: &Reference,
    window: [f64; 2],
) -> Result<Vec<InfoGain>> {
    let [a, b] = window;
    if !(a <= b) {
        return Err(Error::invalid(format!("empty window [{a}, {b}]")));
    }
    let (Some(&first), Some(&last)) = (posterior.times.first(), posterior.times.last()) else {
        return Err(Error::invalid("empty posterior"));
    };
    let slack = 1e-9 * (1.0 + a.abs().max(b.abs()));
    if a < first - slack || b > last + slack {
        return Err(Error::invalid(format!(
            "window [{a}, {b}] outside posterior span [{first}, {last}]"
        )));
    }
    let series = posterior
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= a - slack && t <= b + slack)
        .map(|(n, &t)| reference.gain(&posterior.mean[n], &posterior.cov[n], t))
        .collect::<Result<Vec<_>>>()?;
    if series.is_empty() {
        return Err(Error::invalid(format!("window [{a}, {b}] contains no posterior time")));
    }
    Ok(series)
}

/// Arithmetic mean of a nonempty gain series, labelled with `window`.
pub fn average_series(series: &[InfoGain], window: [f64; 2]) -> Result<InfoGain> {
    if series.is_empty() {
        return Err(Error::invalid("average of an empty gain series"));
    }
    let c = series.len() as f64;
    let signal = series.iter().map(|g| g.signal).sum::<f64>() / c;
    let dispersion = series.iter().map(|g| g.dispersion).sum::<f64>() / c;
    Ok(InfoGain::from_parts(signal, dispersion, window))
}

/// Component-wise mean over an ensemble of gains.
pub fn expected_gain(gains: &[InfoGain]) -> Result<InfoGain> {
    let Some(first) = gains.first() else {
        return Err(Error::invalid("expected gain of an empty list"));
    };
    let tol = 1e-9;
    if gains.iter().any(|g| {
        (g.window[0] - first.window[0]).abs() > tol || (g.window[1] - first.window[1]).abs() > tol
    }) {
        return Err(Error::invalid("gains cover different windows"));
    }
    let n = gains.len() as f64;
    let signal = gains.iter().map(|g| g.signal).sum::<f64>() / n;
    let dispersion = gains.iter().map(|g| g.dispersion).sum::<f64>() / n;
    let mut out = InfoGain::from_parts(signal, dispersion, first.window);
    out.n_ensemble = gains.len();
    Ok(out)
}

/// Entropy reduction `H(U | X₁) − H(U | X₁, X₂)` from adding observations
/// `X₂`, given the two posterior covariances.
pub fn causation_entropy(cov_without: &DMatrix<f64>, cov_with: &DMatrix<f64>) -> f64 {
    entropy_gaussian(cov_without) - entropy_gaussian(cov_with)
}

/// Relative entropy of the posterior with `X₂` against the posterior without.
pub fn causation_relative_entropy(
    with: (&DVector<f64>, &DMatrix<f64>),
    without: (&DVector<f64>, &DMatrix<f64>),
) -> Result<InfoGain> {
    gaussian_relative_entropy(with.0, with.1, without.0, without.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn identical_gaussians_have_zero_gain() {
        let m = v(&[1.0, -2.0]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = gaussian_relative_entropy(&m, &c, &m, &c).unwrap();
        assert!(g.total.abs() < 1e-14 && g.signal == 0.0 && g.dispersion.abs() < 1e-14);
    }

    #[test]
    fn mean_shift_in_one_dimension() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let g = gaussian_relative_entropy(&v(&[1.0]), &one, &v(&[0.0]), &one).unwrap();
        assert!((g.signal - 0.5).abs() < 1e-15);
        assert!(g.dispersion.abs() < 1e-15);
        assert!((g.total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_reference_and_mismatch_are_rejected() {
        let z = DMatrix::zeros(2, 2);
        let id = DMatrix::identity(2, 2);
        let m = v(&[0.0, 0.0]);
        assert!(matches!(
            gaussian_relative_entropy(&m, &id, &m, &z),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            gaussian_relative_entropy(&v(&[0.0]), &DMatrix::identity(1, 1), &m, &id),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn singular_posterior_stays_finite() {
        let id = DMatrix::identity(3, 3);
        let m = v(&[0.0; 3]);
        let g = gaussian_relative_entropy(&m, &DMatrix::zeros(3, 3), &m, &id).unwrap();
        assert!(g.total.is_finite() && g.total > 0.0);
    }

    #[test]
    fn entropy_values() {
        let h1 = entropy_gaussian(&DMatrix::from_element(1, 1, 1.0));
        assert!((h1 - 0.5 * (2.0 * PI * E).ln()).abs() < 1e-12);
        assert!((h1 - 1.4189385332).abs() < 1e-9);
        let h4 = entropy_gaussian(&DMatrix::from_element(1, 1, 4.0));
        assert!((h4 - h1 - 2f64.ln()).abs() < 1e-12);
        assert_eq!(entropy_gaussian(&DMatrix::zeros(2, 2)), f64::NEG_INFINITY);
    }

    #[test]
    fn block_diagonal_entropy_adds() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::from_element(1, 1, 0.3);
        let mut c = DMatrix::zeros(3, 3);
        c.view_mut((0, 0), (2, 2)).copy_from(&a);
        c[(2, 2)] = 0.3;
        assert!((entropy_gaussian(&c) - entropy_gaussian(&a) - entropy_gaussian(&b)).abs() < 1e-10);
    }

    fn scalar_posterior(times: &[f64], means: &[f64], vars: &[f64]) -> GaussianPosterior {
        GaussianPosterior {
            times: times.to_vec(),
            mean: means.iter().map(|&m| v(&[m])).collect(),
            cov: vars.iter().map(|&s| DMatrix::from_element(1, 1, s)).collect(),
        }
    }

    #[test]
    fn time_average_contracts() {
        let eq = scalar_posterior(&[0.0], &[0.0], &[1.0]);
        let flat = scalar_posterior(&[0.0, 0.1, 0.2], &[0.0; 3], &[1.0; 3]);
        assert!(time_averaged_gain(&flat, &eq, [0.0, 0.2]).unwrap().total.abs() < 1e-15);

        let p = scalar_posterior(&[0.0, 0.1, 0.2], &[1.0, 2.0, 0.5], &[0.5, 0.25, 2.0]);
        let single = time_averaged_gain(&p, &eq, [0.1, 0.1]).unwrap();
        let direct = gaussian_relative_entropy(&p.mean[1], &p.cov[1], &eq.mean[0], &eq.cov[0]).unwrap();
        assert!((single.total - direct.total).abs() < 1e-15);

        let g1 = gaussian_relative_entropy(&p.mean[1], &p.cov[1], &eq.mean[0], &eq.cov[0]).unwrap();
        let g2 = gaussian_relative_entropy(&p.mean[2], &p.cov[2], &eq.mean[0], &eq.cov[0]).unwrap();
        let pair = time_averaged_gain(&p, &eq, [0.1, 0.2]).unwrap();
        assert!((pair.total - 0.5 * (g1.total + g2.total)).abs() < 1e-14);
        assert_eq!(pair.window, [0.1, 0.2]);

        assert!(time_averaged_gain(&p, &eq, [0.2, 0.1]).is_err());
        assert!(time_averaged_gain(&p, &eq, [0.0, 0.5]).is_err());
        assert!(time_averaged_gain(&p, &eq, [0.01, 0.02]).is_err());
    }

    #[test]
    fn expectation() {
        let g = |t: f64| InfoGain::from_parts(t, 0.0, [0.0, 1.0]);
        assert_eq!(expected_gain(&[g(1.5)]).unwrap().total, 1.5);
        let e = expected_gain(&[g(1.0), g(3.0)]).unwrap();
        assert_eq!(e.total, 2.0);
        assert_eq!(e.n_ensemble, 2);
        assert_eq!(expected_gain(&[g(3.0), g(1.0)]).unwrap(), e);
        assert!(expected_gain(&[]).is_err());
    }

    #[test]
    fn causation_entropy_of_added_information_is_positive() {
        let without = DMatrix::from_element(1, 1, 1.0);
        let with = DMatrix::from_element(1, 1, 0.25);
        assert!((causation_entropy(&without, &with) - 2f64.ln()).abs() < 1e-12);
        let m = v(&[0.0]);
        let g = causation_relative_entropy((&m, &with), (&m, &without)).unwrap();
        assert!(g.total > 0.0);
    }
}
