//! Drifter placement strategies on cost maps.
//!
//! Every strategy except plain random placement keeps new drifters at least
//! `min_distance` (torus metric) from the existing drifters and from each
//! other. Ties between equal map values go to the lowest linear cell index.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{CostMap, Grid, MapKind, MapProvenance};
use crate::rng::rng_from_seed;
use crate::tracer::torus_distance;
use crate::{par, Error, Point, Result};

/// Cap on the number of uniform draws made by [`random_plan`].
pub const MAX_RANDOM_ATTEMPTS: usize = 100_000;

/// Draws allowed for one position before [`random_plan`] restarts the set.
pub const RESTART_AFTER: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SurrogateAllAtOnce,
    SurrogateSequential,
    BruteForceGreedy,
    Random,
    RandomWithDistance,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SurrogateAllAtOnce => "surrogate_all_at_once",
            Strategy::SurrogateSequential => "surrogate_sequential",
            Strategy::BruteForceGreedy => "brute_force_greedy",
            Strategy::Random => "random",
            Strategy::RandomWithDistance => "random_with_distance",
        }
    }

    pub fn enforces_distance(self) -> bool {
        self != Strategy::Random
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub strategy: Strategy,
    pub positions: Vec<Point>,
    pub min_distance: f64,
    pub seed: Option<u64>,
    pub provenance: String,
}

impl DeploymentPlan {
    /// Number of distance constraints broken against `existing` and within
    /// the plan itself.
    pub fn distance_violations(&self, existing: &[Point]) -> usize {
        count_violations(&self.positions, existing, self.min_distance)
    }
}

pub fn count_violations(new: &[Point], existing: &[Point], min_distance: f64) -> usize {
    let mut n = 0;
    for (a, &p) in new.iter().enumerate() {
        n += existing.iter().filter(|&&e| torus_distance(p, e) < min_distance).count();
        n += new[..a].iter().filter(|&&q| torus_distance(p, q) < min_distance).count();
    }
    n
}

fn check_distance(min_distance: f64) -> Result<()> {
    if !(min_distance >= 0.0) || !min_distance.is_finite() {
        return Err(Error::invalid(format!("min_distance must be ≥ 0, got {min_distance}")));
    }
    Ok(())
}

/// Copy of `map` with every cell within `< min_distance` of a center masked.
pub fn apply_exclusion(map: &CostMap, centers: &[Point], min_distance: f64) -> CostMap {
    let mut out = map.clone();
    if min_distance > 0.0 {
        for &c in centers {
            out.mask_disk(c, min_distance);
        }
    }
    out
}

/// Picks `l2` masked argmaxima of a single fixed map, masking around each
/// pick before the next.
pub fn select_all_at_once(map: &CostMap, existing: &[Point], l2: usize, min_distance: f64) -> Result<DeploymentPlan> {
    check_distance(min_distance)?;
    if l2 == 0 {
        return Err(Error::invalid("at least one drifter must be placed"));
    }
    let mut work = apply_exclusion(map, existing, min_distance);
    let mut positions = Vec::with_capacity(l2);
    for _ in 0..l2 {
        let Some((cell, _)) = work.argmax() else {
            return Err(Error::InfeasiblePlacement {
                placed: positions.len(),
                requested: l2,
            });
        };
        let p = map.grid.center(cell);
        work.mask[cell] = true;
        work.mask_disk(p, min_distance);
        positions.push(p);
    }
    Ok(DeploymentPlan {
        strategy: Strategy::SurrogateAllAtOnce,
        positions,
        min_distance,
        seed: None,
        provenance: provenance_of(map),
    })
}

/// Places one drifter per round, rebuilding the map from all current drifter
/// positions (existing plus placed) each time.
pub fn select_sequential<B>(mut map_builder: B, existing: &[Point], l2: usize, min_distance: f64) -> Result<DeploymentPlan>
where
    B: FnMut(&[Point]) -> Result<CostMap>,
{
    check_distance(min_distance)?;
    if l2 == 0 {
        return Err(Error::invalid("at least one drifter must be placed"));
    }
    let mut all = existing.to_vec();
    let mut positions = Vec::with_capacity(l2);
    let mut last = String::new();
    for _ in 0..l2 {
        let map = map_builder(&all)?;
        let work = apply_exclusion(&map, &all, min_distance);
        let Some((cell, _)) = work.argmax() else {
            return Err(Error::InfeasiblePlacement {
                placed: positions.len(),
                requested: l2,
            });
        };
        let p = map.grid.center(cell);
        positions.push(p);
        all.push(p);
        last = provenance_of(&map);
    }
    Ok(DeploymentPlan {
        strategy: Strategy::SurrogateSequential,
        positions,
        min_distance,
        seed: None,
        provenance: last,
    })
}

/// Outcome of a greedy search: the plan and the exact-gain map of each round.
#[derive(Debug, Clone)]
pub struct GreedySearch {
    pub plan: DeploymentPlan,
    pub rounds: Vec<CostMap>,
    /// Cells whose evaluation failed, per round.
    pub failed: Vec<Vec<usize>>,
}

/// Greedy search on the exact gain. Each round evaluates `eval_gain` with one
/// trial drifter at every cell center of `grid`, then keeps the best cell
/// that respects the distance criterion.
///
/// `eval_gain` receives the new positions including the trial one. Failed
/// evaluations are recorded and skipped. Cells within `min_distance` of a
/// drifter are still evaluated, so each round map is complete, but they are
/// masked for selection.
pub fn brute_force_greedy<G>(
    eval_gain: G,
    grid: Grid,
    existing: &[Point],
    l2: usize,
    min_distance: f64,
) -> Result<GreedySearch>
where
    G: Fn(&[Point]) -> Result<f64> + Sync + Send,
{
    check_distance(min_distance)?;
    if l2 == 0 {
        return Err(Error::invalid("at least one drifter must be placed"));
    }
    let provenance = MapProvenance {
        kind: MapKind::Exact,
        realizations: 1,
        window: [0.0, 0.0],
        t_star: 0.0,
    };
    let mut positions: Vec<Point> = Vec::with_capacity(l2);
    let mut rounds = Vec::with_capacity(l2);
    let mut failed = Vec::with_capacity(l2);
    for _ in 0..l2 {
        let results = par::map((0..grid.len()).collect(), |c| {
            let mut trial = positions.clone();
            trial.push(grid.center(c));
            eval_gain(&trial)
        });
        let mut values = vec![0.0; grid.len()];
        let mut round_failed = Vec::new();
        for (c, r) in results.into_iter().enumerate() {
            match r {
                Ok(g) if g.is_finite() => values[c] = g.max(0.0),
                _ => round_failed.push(c),
            }
        }
        let mut blocked: Vec<Point> = existing.to_vec();
        blocked.extend_from_slice(&positions);
        let mut map = apply_exclusion(&CostMap::new(grid, values, provenance.clone())?, &blocked, min_distance);
        for &c in &round_failed {
            map.mask[c] = true;
        }
        let Some((cell, _)) = map.argmax() else {
            return Err(if round_failed.len() == grid.len() {
                Error::SearchFailure(format!("every candidate evaluation failed in round {}", positions.len() + 1))
            } else {
                Error::InfeasiblePlacement {
                    placed: positions.len(),
                    requested: l2,
                }
            });
        };
        positions.push(grid.center(cell));
        rounds.push(map);
        failed.push(round_failed);
    }
    Ok(GreedySearch {
        plan: DeploymentPlan {
            strategy: Strategy::BruteForceGreedy,
            positions,
            min_distance,
            seed: None,
            provenance: format!("exact gain, {}x{} candidates", grid.m, grid.m),
        },
        rounds,
        failed,
    })
}

/// Uniform random placement, optionally with the distance criterion enforced
/// by rejection sampling. A partial set that leaves no room for the next
/// position is discarded and drawn again.
pub fn random_plan(
    l2: usize,
    min_distance: f64,
    existing: &[Point],
    seed: u64,
    enforce_distance: bool,
) -> Result<DeploymentPlan> {
    check_distance(min_distance)?;
    let mut rng = rng_from_seed(seed);
    let mut positions: Vec<Point> = Vec::with_capacity(l2);
    let mut attempts = 0;
    let mut since_last = 0;
    let mut most = 0;
    while positions.len() < l2 {
        if attempts == MAX_RANDOM_ATTEMPTS {
            return Err(Error::InfeasiblePlacement {
                placed: most,
                requested: l2,
            });
        }
        if since_last == RESTART_AFTER {
            positions.clear();
            since_last = 0;
        }
        attempts += 1;
        since_last += 1;
        let p = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let ok = !enforce_distance
            || existing
                .iter()
                .chain(positions.iter())
                .all(|&q| torus_distance(p, q) >= min_distance);
        if ok {
            positions.push(p);
            most = most.max(positions.len());
            since_last = 0;
        }
    }
    Ok(DeploymentPlan {
        strategy: if enforce_distance {
            Strategy::RandomWithDistance
        } else {
            Strategy::Random
        },
        positions,
        min_distance,
        seed: Some(seed),
        provenance: "uniform".into(),
    })
}

fn provenance_of(map: &CostMap) -> String {
    let p = &map.provenance;
    let kind = match p.kind {
        MapKind::Surrogate => "expected descriptor",
        MapKind::Exact => "exact gain",
    };
    format!(
        "{kind}, {} realizations, window [{}, {}], t* = {}",
        p.realizations, p.window[0], p.window[1], p.t_star
    )
}
