//! Arc-length Lagrangian descriptor maps.
//!
//! `M(x*, t*) = ∫_{t*−τ₁}^{t*+τ₂} |u(x(t), t)| dt` along the noiseless path
//! through `x*` at `t*`. The expected map averages `M` over flow realizations
//! and serves as a cheap surrogate for the information gain.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::flow::{
    step_count, wrap_coord, wrap_point, FlowParams, FlowRealization, KernelScratch, ModeSet, VelocityKernel,
};
use crate::tracer::torus_distance;
use crate::{par, Error, Point, Result};

/// Regular `m × m` lattice of cell centers over `[-π, π)²`.
///
/// Cell `(i, j)` sits at `x = -π + (i + ½)h`, `y = -π + (j + ½)h` and has
/// linear index `j·m + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub m: usize,
}

impl Grid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("grid size must be positive"));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.m as f64
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.m + i
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index % self.m, index / self.m)
    }

    pub fn center(&self, index: usize) -> Point {
        let (i, j) = self.cell(index);
        let h = self.spacing();
        [-PI + (i as f64 + 0.5) * h, -PI + (j as f64 + 0.5) * h]
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|c| self.center(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Surrogate,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapProvenance {
    pub kind: MapKind,
    pub realizations: usize,
    pub window: [f64; 2],
    pub t_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub normalized: bool,
    pub provenance: MapProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMapManifest {
    pub m: usize,
    pub normalized: bool,
    pub masked_cells: usize,
    pub provenance: MapProvenance,
}

impl CostMap {
    pub fn new(grid: Grid, values: Vec<f64>, provenance: MapProvenance) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "map has {} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            mask: vec![false; values.len()],
            values,
            normalized: false,
            provenance,
        })
    }

    /// Largest unmasked value and its cell, lowest index first on ties.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (c, (&v, &masked)) in self.values.iter().zip(&self.mask).enumerate() {
            if masked || v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        best
    }

    /// Scales values so the largest unmasked value is 1. A map whose maximum
    /// is not positive is left as is.
    pub fn normalize(&mut self) {
        if let Some((_, max)) = self.argmax() {
            if max > 0.0 && max.is_finite() {
                self.values.iter_mut().for_each(|v| *v /= max);
                self.normalized = true;
            }
        }
    }

    pub fn masked_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Masks every cell within torus distance `< radius` of `center`.
    pub fn mask_disk(&mut self, center: Point, radius: f64) {
        for c in 0..self.grid.len() {
            if torus_distance(self.grid.center(c), center) < radius {
                self.mask[c] = true;
            }
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["i", "j", "x", "y", "value", "masked"])?;
        for c in 0..self.grid.len() {
            let (i, j) = self.grid.cell(c);
            let [x, y] = self.grid.center(c);
            wtr.serialize((i, j, x, y, self.values[c], self.mask[c]))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn manifest(&self) -> CostMapManifest {
        CostMapManifest {
            m: self.grid.m,
            normalized: self.normalized,
            masked_cells: self.masked_cells(),
            provenance: self.provenance.clone(),
        }
    }
}

/// A time-dependent velocity field sampled on fixed steps.
pub(crate) trait StepField {
    /// Prepares evaluation for the step starting at `t` in direction `sign`.
    fn prepare(&mut self, t: f64, dt: f64, sign: f64);
    fn eval_many(&mut self, xs: &[f64], ys: &[f64], u: &mut [f64], v: &mut [f64]);
}

struct RealizedField<'a> {
    flow: &'a FlowRealization,
    modes: &'a ModeSet,
    params: &'a FlowParams,
    knot: usize,
    kernel: VelocityKernel,
    scratch: KernelScratch,
}

impl<'a> RealizedField<'a> {
    fn new(flow: &'a FlowRealization, modes: &'a ModeSet, params: &'a FlowParams) -> Self {
        Self {
            flow,
            modes,
            params,
            knot: usize::MAX,
            kernel: VelocityKernel::zero(),
            scratch: KernelScratch::default(),
        }
    }
}

impl StepField for RealizedField<'_> {
    fn prepare(&mut self, t: f64, dt: f64, sign: f64) {
        let knot = self.flow.knot_at(t + 0.5 * sign * dt);
        if knot != self.knot {
            self.kernel = VelocityKernel::new(self.modes, &self.flow.coeffs[knot], &self.params.eigenvectors);
            self.knot = knot;
        }
    }

    fn eval_many(&mut self, xs: &[f64], ys: &[f64], u: &mut [f64], v: &mut [f64]) {
        self.kernel.eval_many(xs, ys, u, v, &mut self.scratch);
    }
}

/// Accumulates `Σ |u| dt` along Euler paths from `starts` over `steps` steps
/// in direction `sign`, adding into `out`.
fn accumulate<F: StepField>(field: &mut F, starts: &[Point], t_star: f64, steps: usize, dt: f64, sign: f64, out: &mut [f64]) {
    let n = starts.len();
    let mut xs: Vec<f64> = starts.iter().map(|p| p[0]).collect();
    let mut ys: Vec<f64> = starts.iter().map(|p| p[1]).collect();
    let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
    for s in 0..steps {
        field.prepare(t_star + sign * s as f64 * dt, dt, sign);
        field.eval_many(&xs, &ys, &mut u, &mut v);
        for p in 0..n {
            out[p] += (u[p] * u[p] + v[p] * v[p]).sqrt() * dt;
            xs[p] = wrap_coord(xs[p] + sign * u[p] * dt);
            ys[p] = wrap_coord(ys[p] + sign * v[p] * dt);
        }
    }
}

pub(crate) fn arc_length<F: StepField>(
    field: &mut F,
    starts: &[Point],
    t_star: f64,
    tau1: f64,
    tau2: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let back = step_count(tau1, dt)?;
    let fwd = step_count(tau2, dt)?;
    let starts: Vec<Point> = starts.iter().map(|&x| wrap_point(x)).collect();
    let mut out = vec![0.0; starts.len()];
    accumulate(field, &starts, t_star, back, dt, -1.0, &mut out);
    accumulate(field, &starts, t_star, fwd, dt, 1.0, &mut out);
    Ok(out)
}

fn check_window(flow: &FlowRealization, t_star: f64, tau1: f64, tau2: f64, dt: f64) -> Result<()> {
    if !(tau1 >= 0.0 && tau2 >= 0.0) || tau1 + tau2 == 0.0 {
        return Err(Error::invalid(format!(
            "descriptor window needs τ₁, τ₂ ≥ 0, not both zero (got {tau1}, {tau2})"
        )));
    }
    if !flow.covers(t_star - tau1, t_star + tau2) {
        return Err(Error::invalid(format!(
            "window [{}, {}] lies outside the flow span [{}, {}]",
            t_star - tau1,
            t_star + tau2,
            flow.t0,
            flow.t_end()
        )));
    }
    let ratio = flow.dt / dt;
    if !(ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-6 {
        return Err(Error::invalid(format!("probe step {dt} must divide the flow step {}", flow.dt)));
    }
    Ok(())
}

/// Unnormalized arc-length descriptor of one realization at every cell center.
pub fn ld_single(
    flow: &FlowRealization,
    modes: &ModeSet,
    params: &FlowParams,
    grid: Grid,
    t_star: f64,
    tau1: f64,
    tau2: f64,
    dt: f64,
) -> Result<CostMap> {
    check_window(flow, t_star, tau1, tau2, dt)?;
    let mut field = RealizedField::new(flow, modes, params);
    let values = arc_length(&mut field, &grid.centers(), t_star, tau1, tau2, dt)?;
    CostMap::new(
        grid,
        values,
        MapProvenance {
            kind: MapKind::Surrogate,
            realizations: 1,
            window: [t_star - tau1, t_star + tau2],
            t_star,
        },
    )
}

/// Cell-wise mean of [`ld_single`] over `flows`, normalized to maximum 1.
pub fn ld_expected(
    flows: &[FlowRealization],
    modes: &ModeSet,
    params: &FlowParams,
    grid: Grid,
    t_star: f64,
    tau1: f64,
    tau2: f64,
    dt: f64,
) -> Result<CostMap> {
    let mut map = ld_mean(flows, modes, params, grid, t_star, tau1, tau2, dt)?;
    map.normalize();
    Ok(map)
}

/// Cell-wise mean of [`ld_single`] without normalization.
pub fn ld_mean(
    flows: &[FlowRealization],
    modes: &ModeSet,
    params: &FlowParams,
    grid: Grid,
    t_star: f64,
    tau1: f64,
    tau2: f64,
    dt: f64,
) -> Result<CostMap> {
    if flows.is_empty() {
        return Err(Error::invalid("expected descriptor of an empty ensemble"));
    }
    for f in flows {
        check_window(f, t_star, tau1, tau2, dt)?;
    }
    let maps = par::map(flows.iter().collect(), |f| {
        let mut field = RealizedField::new(f, modes, params);
        arc_length(&mut field, &grid.centers(), t_star, tau1, tau2, dt)
    });
    let mut sum = vec![0.0; grid.len()];
    for m in maps {
        for (s, v) in sum.iter_mut().zip(m?) {
            *s += v;
        }
    }
    let n = flows.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    CostMap::new(
        grid,
        sum,
        MapProvenance {
            kind: MapKind::Surrogate,
            realizations: flows.len(),
            window: [t_star - tau1, t_star + tau2],
            t_star,
        },
    )
}
