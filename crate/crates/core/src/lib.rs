//! Information-driven deployment of Lagrangian drifters.
//!
//! The crate couples a stochastic spectral flow model (Fourier modes driven by
//! complex Ornstein–Uhlenbeck processes) with closed-form conditional-Gaussian
//! Lagrangian data assimilation. Drifter placements are scored by the relative
//! entropy of the posterior against the model equilibrium, and chosen cheaply
//! with an expected arc-length Lagrangian descriptor as a surrogate cost.
//!
//! Module map:
//!
//! * [`flow`]: mode lattice, flow parameters, OU simulation, equilibrium.
//! * [`tracer`]: drifter advection on the doubly periodic domain.
//! * [`da`]: filter, smoother and backward posterior sampler.
//! * [`info`]: Gaussian relative entropy and its averages.
//! * [`descriptor`]: Lagrangian descriptor cost maps.
//! * [`deployment`]: placement strategies and baselines.
//! * [`harness`]: end-to-end scenarios, skill scores, persistence.
//! * [`validate`]: numerical oracles and the quick invariant battery.

pub mod da;
pub mod deployment;
pub mod descriptor;
mod error;
pub mod flow;
pub mod harness;
pub mod info;
pub mod linalg;
mod par;
pub mod rng;
pub mod tracer;
pub mod validate;

pub use error::{Error, Result};
pub use par::set_threads;

/// A position on the periodic domain `[-π, π)²`.
pub type Point = [f64; 2];
