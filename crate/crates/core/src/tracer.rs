//! Drifter advection on the doubly periodic domain.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::flow::{step_count, wrap_coord, wrap_point, FlowParams, FlowRealization, ModeSet, VelocityKernel};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Existing,
    New,
    Candidate,
    Probe,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Existing => "existing",
            Label::New => "new",
            Label::Candidate => "candidate",
            Label::Probe => "probe",
        }
    }
}

/// Drifter paths on a shared uniform time grid, stored drifter-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub t0: f64,
    pub dt: f64,
    n_times: usize,
    /// `tracks[d][n]` is drifter `d` at `t0 + n dt`, wrapped into `[-π, π)²`.
    tracks: Vec<Vec<Point>>,
    labels: Vec<Label>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub seed: u64,
    pub dt: f64,
    pub span: [f64; 2],
    pub n_drifters: usize,
}

impl TrajectorySet {
    /// An empty set (no drifters) on the given grid.
    pub fn empty(t0: f64, dt: f64, n_times: usize) -> Self {
        Self {
            t0,
            dt,
            n_times,
            tracks: Vec::new(),
            labels: Vec::new(),
            seed: 0,
        }
    }

    pub fn from_tracks(t0: f64, dt: f64, tracks: Vec<Vec<Point>>, labels: Vec<Label>) -> Result<Self> {
        let n_times = tracks.first().map_or(0, Vec::len);
        if tracks.iter().any(|t| t.len() != n_times) || labels.len() != tracks.len() {
            return Err(Error::invalid("tracks must share one time grid and have one label each"));
        }
        let tracks = tracks
            .into_iter()
            .map(|t| t.into_iter().map(wrap_point).collect())
            .collect();
        Ok(Self {
            t0,
            dt,
            n_times,
            tracks,
            labels,
            seed: 0,
        })
    }

    pub fn n_drifters(&self) -> usize {
        self.tracks.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_times.saturating_sub(1))
    }

    pub fn position(&self, drifter: usize, n: usize) -> Point {
        self.tracks[drifter][n]
    }

    pub fn track(&self, drifter: usize) -> &[Point] {
        &self.tracks[drifter]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn positions_at(&self, n: usize) -> Vec<Point> {
        self.tracks.iter().map(|t| t[n]).collect()
    }

    /// Displacement from step `n` to `n + 1`, unwrapped across the boundary.
    pub fn increment(&self, drifter: usize, n: usize) -> Point {
        let a = self.tracks[drifter][n];
        let b = self.tracks[drifter][n + 1];
        [wrap_coord(b[0] - a[0]), wrap_coord(b[1] - a[1])]
    }

    /// Index of the grid time closest to `t`, if it lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let s = (t - self.t0) / self.dt;
        let n = s.round();
        ((s - n).abs() < 1e-6 && n >= 0.0 && (n as usize) < self.n_times).then_some(n as usize)
    }

    pub fn relabel(mut self, label: Label) -> Self {
        self.labels.iter_mut().for_each(|l| *l = label);
        self
    }

    fn same_grid(&self, other: &TrajectorySet) -> bool {
        self.n_times == other.n_times
            && (self.t0 - other.t0).abs() <= 1e-9 * (1.0 + self.t0.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt.abs().max(1.0)
    }

    /// Appends the drifters of `other`, which must share the time grid.
    pub fn merge(&self, other: &TrajectorySet) -> Result<TrajectorySet> {
        if other.n_drifters() == 0 {
            return Ok(self.clone());
        }
        if self.n_drifters() == 0 {
            return Ok(other.clone());
        }
        if !self.same_grid(other) {
            return Err(Error::invalid("cannot merge trajectory sets on different grids"));
        }
        let mut out = self.clone();
        out.tracks.extend(other.tracks.iter().cloned());
        out.labels.extend(other.labels.iter().copied());
        Ok(out)
    }

    /// Restriction to the grid times in `[a, b]`.
    pub fn window(&self, a: f64, b: f64) -> Result<TrajectorySet> {
        let (i, j) = match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) if i <= j => (i, j),
            _ => return Err(Error::invalid(format!("window [{a}, {b}] is not on the trajectory grid"))),
        };
        Ok(TrajectorySet {
            t0: self.time(i),
            dt: self.dt,
            n_times: j - i + 1,
            tracks: self.tracks.iter().map(|t| t[i..=j].to_vec()).collect(),
            labels: self.labels.clone(),
            seed: self.seed,
        })
    }

    /// Joins a set ending at time `t` with one starting at `t`; the shared
    /// time appears once.
    pub fn concat_time(&self, later: &TrajectorySet) -> Result<TrajectorySet> {
        if self.n_drifters() != later.n_drifters()
            || (self.t_end() - later.t0).abs() > 1e-9 * (1.0 + later.t0.abs())
            || (self.dt - later.dt).abs() > 1e-12
        {
            return Err(Error::invalid("trajectory pieces do not join"));
        }
        let tracks = self
            .tracks
            .iter()
            .zip(&later.tracks)
            .map(|(a, b)| {
                let mut t = a.clone();
                t.extend_from_slice(&b[1..]);
                t
            })
            .collect();
        Ok(TrajectorySet {
            t0: self.t0,
            dt: self.dt,
            n_times: self.n_times + later.n_times - 1,
            tracks,
            labels: self.labels.clone(),
            seed: self.seed,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "drifter", "label", "x", "y"])?;
        for n in 0..self.n_times {
            let t = self.time(n);
            for (d, track) in self.tracks.iter().enumerate() {
                wtr.serialize((t, d, self.labels[d].as_str(), track[n][0], track[n][1]))?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn manifest(&self) -> TrajectoryManifest {
        TrajectoryManifest {
            seed: self.seed,
            dt: self.dt,
            span: [self.t0, self.t_end()],
            n_drifters: self.n_drifters(),
        }
    }
}

/// Integrates `dx = u(x, t) dt + σ_x dW` with Euler–Maruyama from `t_span.0`
/// to `t_span.1`; a decreasing span integrates backward with negated drift.
///
/// The flow is held constant over each of its steps. `dt` must equal the flow step
/// or divide it. Drifter `d` draws noise from its own stream derived from
/// `seed`. The result is stored on an increasing time grid either way.
pub fn advect(
    flow: &FlowRealization,
    modes: &ModeSet,
    params: &FlowParams,
    starts: &[Point],
    t_span: (f64, f64),
    dt: f64,
    seed: u64,
    noise_on: bool,
) -> Result<TrajectorySet> {
    let (t_from, t_to) = t_span;
    if !flow.covers(t_from, t_to) {
        return Err(Error::invalid(format!(
            "span [{t_from}, {t_to}] lies outside the flow span [{}, {}]",
            flow.t0,
            flow.t_end()
        )));
    }
    let ratio = flow.dt / dt;
    if !(ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "tracer step {dt} must divide the flow step {}",
            flow.dt
        )));
    }
    let n_steps = step_count((t_to - t_from).abs(), dt)?;
    let direction = if t_to < t_from { -1.0 } else { 1.0 };
    let sigma = if noise_on { params.sigma_x } else { 0.0 };
    let noise_amp = sigma * dt.sqrt();

    let mut rngs: Vec<_> = (0..starts.len())
        .map(|d| rng_from_seed(derive_seed(seed, &format!("drifter/{d}"))))
        .collect();
    let mut tracks: Vec<Vec<Point>> = starts
        .iter()
        .map(|&x| {
            let mut t = Vec::with_capacity(n_steps + 1);
            t.push(wrap_point(x));
            t
        })
        .collect();

    let mut kernel_knot = usize::MAX;
    let mut kernel = VelocityKernel::zero();
    for s in 0..n_steps {
        let t = t_from + direction * s as f64 * dt;
        let knot = flow.knot_at(t + 0.5 * direction * dt);
        if knot != kernel_knot {
            kernel = VelocityKernel::new(modes, &flow.coeffs[knot], &params.eigenvectors);
            kernel_knot = knot;
        }
        for (track, rng) in tracks.iter_mut().zip(rngs.iter_mut()) {
            let x = *track.last().unwrap();
            let u = kernel.eval(x);
            let mut next = [x[0] + direction * u[0] * dt, x[1] + direction * u[1] * dt];
            if noise_amp > 0.0 {
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                next[0] += noise_amp * zx;
                next[1] += noise_amp * zy;
            }
            track.push(wrap_point(next));
        }
    }

    let t0 = if direction < 0.0 {
        for track in &mut tracks {
            track.reverse();
        }
        t_from - n_steps as f64 * dt
    } else {
        t_from
    };
    let labels = vec![Label::Existing; tracks.len()];
    Ok(TrajectorySet {
        t0,
        dt,
        n_times: n_steps + 1,
        tracks,
        labels,
        seed,
    })
}

/// Independent uniform positions on `[-π, π)²`.
pub fn uniform_initial_positions(count: usize, seed: u64) -> Vec<Point> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            [
                wrap_coord(rng.random_range(-PI..PI)),
                wrap_coord(rng.random_range(-PI..PI)),
            ]
        })
        .collect()
}

/// Shortest distance between two points on the torus.
pub fn torus_distance(a: Point, b: Point) -> f64 {
    let dx = wrap_coord(a[0] - b[0]);
    let dy = wrap_coord(a[1] - b[1]);
    dx.hypot(dy)
}
