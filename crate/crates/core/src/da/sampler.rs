use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{AugmentedState, GaussianPosterior, LinearModel};
use crate::flow::{FlowParams, FlowRealization, ModeSet};
use crate::linalg::{self, SpdSolver};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

const INVERSE_FLOOR: f64 = 1e-10;

/// Draws flow paths from the smoothing posterior by integrating the backward
/// sampling SDE
///
/// ```text
/// ←dU = ←dμ_s − (Λ + Σ_U Σ_Uᵀ R⁻¹)(U − μ_s) dt + Σ_U dW
/// ```
///
/// with Euler–Maruyama from `U(T) ~ N(μ_s(T), R_s(T))`, where `R` is the
/// filter covariance. Sample `s` uses its own stream derived from `seed`, so a
/// sample does not depend on how many others are drawn.
pub fn backward_sample(
    smoother_out: &GaussianPosterior,
    filter_out: &GaussianPosterior,
    params: &FlowParams,
    modes: &ModeSet,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FlowRealization>> {
    let n_times = smoother_out.len();
    if n_times == 0 || filter_out.len() != n_times {
        return Err(Error::invalid("smoother and filter outputs must share a nonempty grid"));
    }
    if smoother_out
        .times
        .iter()
        .zip(&filter_out.times)
        .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs()))
    {
        return Err(Error::invalid("smoother and filter outputs are on different grids"));
    }
    let dim = modes.state_dim();
    if smoother_out.dim() != dim {
        return Err(Error::invalid("posterior dimension does not match the mode set"));
    }
    let dt = if n_times > 1 {
        smoother_out.times[1] - smoother_out.times[0]
    } else {
        1.0
    };
    let model = LinearModel::new(params, modes);
    let lambda = model.drift_matrix();
    let noise_sd = model.noise_var.map(|q| (q * dt).sqrt());
    let aug = AugmentedState::new(modes);

    let mut rngs: Vec<_> = (0..n_samples)
        .map(|s| rng_from_seed(derive_seed(seed, &format!("sample/{s}"))))
        .collect();
    let draw = |rng: &mut crate::rng::StreamRng| -> DVector<f64> {
        DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
    };

    let last = n_times - 1;
    let root = linalg::psd_sqrt(&smoother_out.cov[last]);
    // deviations e = U − μ_s, one per sample
    let mut devs: Vec<DVector<f64>> = rngs.iter_mut().map(|r| &root * draw(r)).collect();
    let mut paths: Vec<Vec<DVector<f64>>> = (0..n_samples)
        .map(|_| Vec::with_capacity(n_times))
        .collect();
    for (path, e) in paths.iter_mut().zip(&devs) {
        path.push(&smoother_out.mean[last] + e);
    }

    for n in (0..last).rev() {
        let t = smoother_out.times[n + 1];
        let r = &filter_out.cov[n + 1];
        let solver = SpdSolver::new(r, INVERSE_FLOOR * linalg::trace(r))
            .ok_or_else(|| Error::numerical(t, "filter covariance cannot be regularized"))?;
        // gain = Λ + Q R⁻¹
        let mut gain = solver.inverse();
        for i in 0..dim {
            gain.row_mut(i).scale_mut(model.noise_var[i]);
        }
        gain += &lambda;
        let step: DMatrix<f64> = DMatrix::identity(dim, dim) - gain * dt;
        for ((e, path), rng) in devs.iter_mut().zip(paths.iter_mut()).zip(rngs.iter_mut()) {
            let z = draw(rng);
            *e = &step * &*e + z.component_mul(&noise_sd);
            path.push(&smoother_out.mean[n] + &*e);
        }
        if devs.iter().any(|e| e.iter().any(|v| !v.is_finite())) {
            return Err(Error::numerical(smoother_out.times[n], "backward sampler diverged"));
        }
    }

    Ok(paths
        .into_iter()
        .map(|mut path| {
            path.reverse();
            FlowRealization {
                t0: smoother_out.times[0],
                dt,
                coeffs: path.iter().map(|v| aug.complexify(v)).collect(),
            }
        })
        .collect())
}
