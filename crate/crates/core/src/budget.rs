//! Personalized privacy budget allocation: trajectory-derived location
//! sensitivity, inverse-sensitivity budget splitting over sensitive cells,
//! and distance-scaled budgets for their road-graph neighbors.

use crate::error::{Error, Result};
use crate::graph::{NeighborMode, RoadGraph};
use crate::grid::{CellId, GridMap};
use crate::mobility::Trajectory;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Weights for the sensitivity score `S = alpha*L + beta*F + gamma*C`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.alpha, self.beta, self.gamma];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "sensitivity weights must be finite and nonnegative".into(),
            ));
        }
        if vals.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(
                "at least one sensitivity weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell sensitivity inputs and the resulting score.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub cell: CellId,
    pub stay_duration: f64,
    pub access_frequency: f64,
    pub semantic_class: u8,
    pub sensitivity: f64,
}

/// Result of the budget allocation pass.
///
/// `resolved` carries the final budget for every budgeted cell: a cell that
/// receives several candidate budgets (sensitive and/or adjacent to multiple
/// sensitive cells) keeps the smallest, which preserves the strongest
/// protection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub epsilon_s: f64,
    pub sensitive: BTreeMap<CellId, f64>,
    pub adjacent: BTreeMap<CellId, f64>,
    pub resolved: BTreeMap<CellId, f64>,
    pub profiles: Vec<SensitivityProfile>,
    /// Number of (sensitive, neighbor) pairs visited; the allocation touches
    /// each pair exactly once.
    pub pairs_processed: u64,
}

impl BudgetAllocation {
    /// Budget for a release anchored at `cell`, falling back to the
    /// configured default for cells that received none.
    pub fn budget_for(&self, cell: CellId, epsilon_default: f64) -> f64 {
        self.resolved.get(&cell).copied().unwrap_or(epsilon_default)
    }
}

/// Fraction of the timesteps in `[t1, t2)` the user spends at `cell`.
pub fn stay_duration(
    cell: CellId,
    trajectories: &[Trajectory],
    window: (u32, u32),
) -> Result<f64> {
    let (t1, t2) = window;
    if t2 <= t1 {
        return Err(Error::EmptyWindow);
    }
    let mut occupied: BTreeSet<u32> = BTreeSet::new();
    for tr in trajectories {
        for &(t, c) in tr.steps() {
            if c == cell && (t1..t2).contains(&t) {
                occupied.insert(t);
            }
        }
    }
    Ok(occupied.len() as f64 / (t2 - t1) as f64)
}

/// Visit-count share of `cell` among all recorded steps.
pub fn access_frequency(cell: CellId, trajectories: &[Trajectory]) -> Result<f64> {
    let total: usize = trajectories.iter().map(|t| t.len()).sum();
    if total == 0 {
        return Err(Error::EmptyInput("no trajectory steps"));
    }
    let visits = trajectories
        .iter()
        .flat_map(|t| t.cells())
        .filter(|&c| c == cell)
        .count();
    Ok(visits as f64 / total as f64)
}

/// `S = alpha*L + beta*F + gamma*C`, with the semantic class used raw.
pub fn sensitivity(
    stay_duration: f64,
    access_frequency: f64,
    semantic_class: u8,
    weights: &Weights,
) -> f64 {
    weights.alpha * stay_duration
        + weights.beta * access_frequency
        + weights.gamma * semantic_class as f64
}

/// Inverse-sensitivity-proportional split of the total budget.
pub fn allocate_sensitive(
    sensitivities: &BTreeMap<CellId, f64>,
    epsilon_s: f64,
) -> Result<BTreeMap<CellId, f64>> {
    if sensitivities.is_empty() {
        return Err(Error::EmptyInput("no sensitive cells"));
    }
    if epsilon_s <= 0.0 || !epsilon_s.is_finite() {
        return Err(Error::InvalidArgument("epsilon_s must be positive".into()));
    }
    for (&cell, &score) in sensitivities {
        if score <= 0.0 || !score.is_finite() {
            return Err(Error::NonpositiveSensitivity { cell, score });
        }
    }
    let inv_sum: f64 = sensitivities.values().map(|s| 1.0 / s).sum();
    Ok(sensitivities
        .iter()
        .map(|(&cell, &score)| (cell, (1.0 / score) / inv_sum * epsilon_s))
        .collect())
}

/// Distance-scaled neighbor budgets: each neighbor receives
/// `d(i,j) * (sum_k 1/d(i,k)) * eps_i`, so closer neighbors receive smaller
/// budgets. Distances are cell-center distances on the map.
pub fn allocate_adjacent(
    sensitive_cell: CellId,
    eps_i: f64,
    neighbors: &BTreeSet<CellId>,
    map: &GridMap,
) -> Result<BTreeMap<CellId, f64>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyInput("no adjacent nodes"));
    }
    let mut inv_sum = 0.0;
    for &j in neighbors {
        let d = map.distance(sensitive_cell, j);
        if d <= 0.0 {
            return Err(Error::ZeroDistance {
                sensitive: sensitive_cell,
                neighbor: j,
            });
        }
        inv_sum += 1.0 / d;
    }
    Ok(neighbors
        .iter()
        .map(|&j| (j, map.distance(sensitive_cell, j) * inv_sum * eps_i))
        .collect())
}

/// Knobs for the allocation pass beyond the core inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PpbaParams {
    pub weights: Weights,
    /// Stay-duration window; defaults to the union span of the trajectories.
    pub window: Option<(u32, u32)>,
    /// Semantic class per cell; unlisted sensitive cells default to class 4.
    pub semantic_classes: BTreeMap<CellId, u8>,
    pub neighbor_mode: NeighborMode,
    /// Clamp neighbor budgets at the sensitive cell's own budget. The raw
    /// distance-scaled rule yields neighbor budgets at or above it.
    pub cap_adjacent_at_sensitive: bool,
}

impl Default for PpbaParams {
    fn default() -> Self {
        PpbaParams {
            weights: Weights::default(),
            window: None,
            semantic_classes: BTreeMap::new(),
            neighbor_mode: NeighborMode::Out,
            cap_adjacent_at_sensitive: false,
        }
    }
}

const DEFAULT_SEMANTIC_CLASS: u8 = 4;

/// The full allocation pass: per-cell sensitivity from the trajectory
/// history, inverse-sensitivity budgets for sensitive cells, distance-scaled
/// budgets for their graph neighbors, and the min rule wherever budgets
/// collide.
pub fn run_ppba(
    trajectories: &[Trajectory],
    graph: &RoadGraph,
    sensitive_cells: &[CellId],
    epsilon_s: f64,
    params: &PpbaParams,
    map: &GridMap,
) -> Result<BudgetAllocation> {
    if sensitive_cells.is_empty() {
        return Err(Error::EmptyInput("no sensitive cells"));
    }
    params.weights.validate()?;
    let window = params.window.or_else(|| default_window(trajectories));
    let window = window.ok_or(Error::EmptyInput("no trajectory steps"))?;

    let sensitive: BTreeSet<CellId> = sensitive_cells.iter().copied().collect();
    for &cell in &sensitive {
        if !graph.contains_vertex(cell) {
            return Err(Error::UnknownVertex(cell));
        }
    }

    let mut profiles = Vec::with_capacity(sensitive.len());
    let mut scores = BTreeMap::new();
    for &cell in &sensitive {
        let l = stay_duration(cell, trajectories, window)?;
        let f = access_frequency(cell, trajectories)?;
        let c = params
            .semantic_classes
            .get(&cell)
            .copied()
            .unwrap_or(DEFAULT_SEMANTIC_CLASS);
        let s = sensitivity(l, f, c, &params.weights);
        profiles.push(SensitivityProfile {
            cell,
            stay_duration: l,
            access_frequency: f,
            semantic_class: c,
            sensitivity: s,
        });
        scores.insert(cell, s);
    }

    let sensitive_budgets = allocate_sensitive(&scores, epsilon_s)?;

    let mut adjacent: BTreeMap<CellId, f64> = BTreeMap::new();
    let mut resolved = sensitive_budgets.clone();
    let mut pairs_processed = 0u64;
    for (&cell, &eps_i) in &sensitive_budgets {
        let neighbors = graph.neighbors(cell, params.neighbor_mode)?;
        if neighbors.is_empty() {
            continue;
        }
        let mut neighbor_budgets = allocate_adjacent(cell, eps_i, &neighbors, map)?;
        pairs_processed += neighbor_budgets.len() as u64;
        if params.cap_adjacent_at_sensitive {
            for eps in neighbor_budgets.values_mut() {
                *eps = eps.min(eps_i);
            }
        }
        for (j, eps_j) in neighbor_budgets {
            adjacent
                .entry(j)
                .and_modify(|e| *e = e.min(eps_j))
                .or_insert(eps_j);
            resolved
                .entry(j)
                .and_modify(|e| *e = e.min(eps_j))
                .or_insert(eps_j);
        }
    }

    Ok(BudgetAllocation {
        epsilon_s,
        sensitive: sensitive_budgets,
        adjacent,
        resolved,
        profiles,
        pairs_processed,
    })
}

fn default_window(trajectories: &[Trajectory]) -> Option<(u32, u32)> {
    let first = trajectories.iter().filter_map(|t| t.span()).map(|s| s.0).min()?;
    let last = trajectories.iter().filter_map(|t| t.span()).map(|s| s.1).max()?;
    Some((first, last))
}
