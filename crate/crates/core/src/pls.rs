//! Protection location sets: the conditional inference-error lower bound and
//! the minimum-diameter window search along rotated Hilbert curves.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap, HilbertIndex, Rotation};
use crate::mobility::{DeltaLocationSet, ProbVector};
use serde::{Deserialize, Serialize};

/// A protection location set: the anchor plus the cells released in its
/// place, with the diameter and conditional error cached at search time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtectionLocationSet {
    /// Member cells in ascending id order; always contains `anchor`.
    pub cells: Vec<CellId>,
    pub anchor: CellId,
    /// Maximum pairwise cell-center distance.
    pub diameter_m: f64,
    /// Conditional inference error of the set under the search prior.
    pub e_value_m: f64,
    /// Rotation of the Hilbert curve that produced the winning window.
    pub rotation_deg: u16,
}

impl ProtectionLocationSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: CellId) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }
}

/// Conditional expected inference error `E` of a cell set: the best guess
/// anywhere on the map against the prior renormalized over the set.
pub fn conditional_error(cells: &[CellId], prior: &ProbVector, map: &GridMap) -> Result<f64> {
    let mass: f64 = cells.iter().map(|&c| prior.get(c)).sum();
    if mass <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let mut best = f64::INFINITY;
    for guess in map.cells() {
        let mut acc = 0.0;
        for &c in cells {
            acc += prior.get(c) * map.distance(guess, c);
        }
        best = best.min(acc / mass);
    }
    Ok(best)
}

pub fn diameter(cells: &[CellId], map: &GridMap) -> f64 {
    let mut d = 0.0f64;
    for (i, &a) in cells.iter().enumerate() {
        for &b in &cells[i + 1..] {
            d = d.max(map.distance(a, b));
        }
    }
    d
}

struct RotationCandidate {
    cells: Vec<CellId>,
    diameter_m: f64,
    e_value_m: f64,
    rotation: Rotation,
}

/// Searches the four curve rotations for the smallest-diameter contiguous
/// pool window, anchored at the protected cell, whose conditional error
/// reaches `e^epsilon * e_m`. Ties fall to fewer cells, then to the lower
/// rotation.
pub fn search_pls(
    anchor: CellId,
    pool: &DeltaLocationSet,
    prior: &ProbVector,
    epsilon: f64,
    e_m: f64,
    map: &GridMap,
) -> Result<ProtectionLocationSet> {
    if !pool.contains(anchor) {
        return Err(Error::InvalidArgument(format!(
            "anchor {anchor} is not in the candidate pool"
        )));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidArgument("epsilon must be nonnegative".into()));
    }
    if e_m <= 0.0 || !e_m.is_finite() {
        return Err(Error::InvalidArgument("e_m must be positive".into()));
    }
    let threshold = epsilon.exp() * e_m;

    let mut best: Option<RotationCandidate> = None;
    for rotation in Rotation::ALL {
        if let Some(cand) = search_rotation(anchor, pool, prior, threshold, map, rotation) {
            let better = match &best {
                None => true,
                Some(b) => {
                    (cand.diameter_m, cand.cells.len()) < (b.diameter_m, b.cells.len())
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }

    match best {
        Some(c) => Ok(ProtectionLocationSet {
            cells: c.cells,
            anchor,
            diameter_m: c.diameter_m,
            e_value_m: c.e_value_m,
            rotation_deg: c.rotation.degrees(),
        }),
        None => Err(Error::Infeasible {
            anchor,
            epsilon,
            e_m,
            pool_size: pool.len(),
            timestep: None,
        }),
    }
}

/// Grows a window over the rank-ordered pool: starts at the anchor, first
/// extends toward the side whose next cell is nearer in rank (ties to the
/// lower-rank side), then alternates sides, skipping exhausted ones. Stops at
/// the first window of two or more cells whose conditional error reaches the
/// threshold.
fn search_rotation(
    anchor: CellId,
    pool: &DeltaLocationSet,
    prior: &ProbVector,
    threshold: f64,
    map: &GridMap,
    rotation: Rotation,
) -> Option<RotationCandidate> {
    let h = HilbertIndex::covering(map, rotation);
    let mut ordered: Vec<(u64, CellId)> = pool
        .cells()
        .iter()
        .map(|&c| (map.hilbert_rank(c, &h), c))
        .collect();
    ordered.sort_unstable();
    let anchor_idx = ordered
        .iter()
        .position(|&(_, c)| c == anchor)
        .expect("anchor verified in pool");
    let anchor_rank = ordered[anchor_idx].0;

    // Incremental E: per-guess accumulated sum of prior * distance over the
    // window, minimized over all map cells after each growth step.
    let n = map.n_cells();
    let mut acc = vec![0.0f64; n];
    let mut mass = 0.0f64;
    let mut diam = 0.0f64;
    let mut window: Vec<CellId> = Vec::with_capacity(ordered.len());

    let add_cell = |cell: CellId,
                        acc: &mut Vec<f64>,
                        mass: &mut f64,
                        diam: &mut f64,
                        window: &mut Vec<CellId>| {
        let p = prior.get(cell);
        for (g, a) in acc.iter_mut().enumerate() {
            *a += p * map.distance(CellId(g as u32), cell);
        }
        *mass += p;
        for &w in window.iter() {
            *diam = diam.max(map.distance(w, cell));
        }
        window.push(cell);
    };

    add_cell(anchor, &mut acc, &mut mass, &mut diam, &mut window);
    let (mut lo, mut hi) = (anchor_idx, anchor_idx);

    // First growth side: nearer next rank, ties to the lower-rank side.
    let mut go_low = match (lo > 0, hi + 1 < ordered.len()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => return None,
        (true, true) => {
            let d_low = anchor_rank - ordered[lo - 1].0;
            let d_high = ordered[hi + 1].0 - anchor_rank;
            d_low <= d_high
        }
    };

    loop {
        if window.len() >= 2 && mass > 0.0 {
            let e_inc = acc.iter().cloned().fold(f64::INFINITY, f64::min) / mass;
            if e_inc >= threshold {
                // confirm with the batch computation before accepting
                let e_batch = conditional_error(&window, prior, map).ok()?;
                if e_batch >= threshold {
                    let mut cells = window.clone();
                    cells.sort_unstable();
                    return Some(RotationCandidate {
                        diameter_m: diameter(&cells, map),
                        e_value_m: e_batch,
                        cells,
                        rotation,
                    });
                }
            }
        }
        let can_low = lo > 0;
        let can_high = hi + 1 < ordered.len();
        let side_low = match (can_low, can_high) {
            (false, false) => return None,
            (true, false) => true,
            (false, true) => false,
            (true, true) => go_low,
        };
        if side_low {
            lo -= 1;
            add_cell(ordered[lo].1, &mut acc, &mut mass, &mut diam, &mut window);
        } else {
            hi += 1;
            add_cell(ordered[hi].1, &mut acc, &mut mass, &mut diam, &mut window);
        }
        go_low = !side_low;
    }
}

/// How an infeasible error bound is relaxed before giving up.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundAdjustment {
    pub decay: f64,
    pub max_retries: u32,
}

impl Default for BoundAdjustment {
    fn default() -> Self {
        BoundAdjustment {
            decay: 0.8,
            max_retries: 5,
        }
    }
}

/// Retries an infeasible search with a geometrically decayed error bound.
/// Returns the set, the bound that finally succeeded, and how many decays it
/// took.
pub fn search_pls_adjusted(
    anchor: CellId,
    pool: &DeltaLocationSet,
    prior: &ProbVector,
    epsilon: f64,
    e_m: f64,
    map: &GridMap,
    adjust: BoundAdjustment,
) -> Result<(ProtectionLocationSet, f64, u32)> {
    if !(adjust.decay > 0.0 && adjust.decay < 1.0) {
        return Err(Error::InvalidArgument("e_m decay must lie in (0, 1)".into()));
    }
    let mut bound = e_m;
    for attempt in 0..=adjust.max_retries {
        match search_pls(anchor, pool, prior, epsilon, bound, map) {
            Ok(pls) => return Ok((pls, bound, attempt)),
            Err(Error::Infeasible { .. }) if attempt < adjust.max_retries => {
                bound *= adjust.decay;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop returns on success or terminal error")
}
