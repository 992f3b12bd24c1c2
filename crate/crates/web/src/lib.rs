//! Browser bindings for the demo page: expected-descriptor maps, placement
//! on a map and an instantaneous speed field.
//!
//! Positions cross the boundary as flat `[x0, y0, x1, y1, …]` arrays and
//! maps as row-major `m × m` arrays (cell `(i, j)` at `j * m + i`).

use driftdeploy::deployment::select_all_at_once;
use driftdeploy::descriptor::{ld_expected, CostMap, Grid, MapKind, MapProvenance};
use driftdeploy::flow::{sample_equilibrium, simulate_flow, velocity_at, FlowParams, ModeSet};
use driftdeploy::rng::{derive_seed, rng_from_seed};
use driftdeploy::{Error, Point, Result};
use wasm_bindgen::prelude::*;

/// Flow and probe step of the demo.
pub const DT: f64 = 1e-2;

const MAX_GRID: usize = 64;
const MAX_REALIZATIONS: usize = 64;

fn model(kmax: i32, noise: f64) -> Result<(ModeSet, FlowParams)> {
    let modes = ModeSet::build(kmax)?;
    let params = FlowParams::eddy(&modes, noise, 0.1);
    params.validate(&modes)?;
    Ok((modes, params))
}

fn grid(m: usize) -> Result<Grid> {
    if m > MAX_GRID {
        return Err(Error::InvalidArgument(format!("grid larger than {MAX_GRID}")));
    }
    Grid::new(m)
}

fn points(flat: &[f64]) -> Result<Vec<Point>> {
    if flat.len() % 2 != 0 {
        return Err(Error::InvalidArgument("positions must come in (x, y) pairs".into()));
    }
    Ok(flat.chunks(2).map(|c| [c[0], c[1]]).collect())
}

/// Speed `|u|` of one equilibrium flow draw at every cell center.
pub fn speed_values(kmax: i32, noise: f64, seed: u32, m: usize) -> Result<Vec<f64>> {
    let (modes, params) = model(kmax, noise)?;
    let coeffs = sample_equilibrium(&params, &modes, &mut rng_from_seed(seed as u64));
    grid(m)?
        .centers()
        .into_iter()
        .map(|x| velocity_at(&modes, &coeffs, &params.eigenvectors, x).map(|u| u[0].hypot(u[1])))
        .collect()
}

/// Normalized expected arc-length map over `realizations` independent flows
/// started at equilibrium, probed over `[0, 2τ]` around `t* = τ`.
pub fn descriptor_values(kmax: i32, noise: f64, seed: u32, realizations: usize, m: usize, tau: f64) -> Result<Vec<f64>> {
    if realizations == 0 || realizations > MAX_REALIZATIONS {
        return Err(Error::InvalidArgument(format!("realizations must be in 1..={MAX_REALIZATIONS}")));
    }
    if !(tau >= DT && tau <= 5.0) {
        return Err(Error::InvalidArgument("tau must lie in [0.01, 5]".into()));
    }
    let tau = (tau / DT).round() * DT;
    let (modes, params) = model(kmax, noise)?;
    let flows = (0..realizations)
        .map(|r| {
            let s = derive_seed(seed as u64, &format!("realization/{r}"));
            let init = sample_equilibrium(&params, &modes, &mut rng_from_seed(s));
            simulate_flow(&params, &modes, &init, (0.0, 2.0 * tau), DT, derive_seed(s, "flow"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ld_expected(&flows, &modes, &params, grid(m)?, tau, tau, tau, DT)?.values)
}

/// Greedy all-at-once placement of `count` drifters on an `m × m` map,
/// keeping `min_distance` from `existing` and from each other.
pub fn placement(values: &[f64], m: usize, existing: &[f64], count: usize, min_distance: f64) -> Result<Vec<f64>> {
    let grid = grid(m)?;
    if values.len() != grid.len() {
        return Err(Error::InvalidArgument(format!("map has {} values, expected {}", values.len(), grid.len())));
    }
    let map = CostMap::new(
        grid,
        values.to_vec(),
        MapProvenance {
            kind: MapKind::Surrogate,
            realizations: 1,
            window: [0.0, 0.0],
            t_star: 0.0,
        },
    )?;
    let plan = select_all_at_once(&map, &points(existing)?, count, min_distance)?;
    Ok(plan.positions.into_iter().flatten().collect())
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = speedField)]
pub fn speed_field(kmax: i32, noise: f64, seed: u32, m: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(speed_values(kmax, noise, seed, m))
}

#[wasm_bindgen(js_name = descriptorMap)]
pub fn descriptor_map(
    kmax: i32,
    noise: f64,
    seed: u32,
    realizations: usize,
    m: usize,
    tau: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    js(descriptor_values(kmax, noise, seed, realizations, m, tau))
}

#[wasm_bindgen(js_name = placeDrifters)]
pub fn place_drifters(
    values: &[f64],
    m: usize,
    existing: &[f64],
    count: usize,
    min_distance: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    js(placement(values, m, existing, count, min_distance))
}
