//! Perturbation mechanisms over a protection set: the permute-and-flip
//! release distribution, an exponential-mechanism baseline, a uniform
//! delta-set baseline, seeded sampling, and the exhaustive privacy-ratio
//! check.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use crate::mobility::{DeltaLocationSet, LikelihoodModel};
use crate::pls::ProtectionLocationSet;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismTag {
    Pf,
    Exp,
    Uniform,
}

impl std::fmt::Display for MechanismTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MechanismTag::Pf => "pf",
            MechanismTag::Exp => "exp",
            MechanismTag::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for MechanismTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pf" => Ok(MechanismTag::Pf),
            "exp" => Ok(MechanismTag::Exp),
            "uniform" => Ok(MechanismTag::Uniform),
            other => Err(Error::InvalidArgument(format!(
                "unknown mechanism `{other}` (expected pf, exp, or uniform)"
            ))),
        }
    }
}

/// Release distribution `f(. | true_cell)` over an ordered support.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationDistribution {
    pub true_cell: CellId,
    /// Ascending cell ids.
    pub support: Vec<CellId>,
    pub probs: Vec<f64>,
    pub mechanism_tag: MechanismTag,
}

impl PerturbationDistribution {
    pub fn prob_of(&self, cell: CellId) -> f64 {
        match self.support.binary_search(&cell) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    /// Exact expected distance between the true cell and the release.
    pub fn expected_distance(&self, map: &GridMap) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(&c, &p)| p * map.distance(self.true_cell, c))
            .sum()
    }
}

/// Draws one support cell; deterministic given the generator state.
pub fn sample<R: Rng + ?Sized>(dist: &PerturbationDistribution, rng: &mut R) -> CellId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&cell, &p) in dist.support.iter().zip(&dist.probs) {
        acc += p;
        if u < acc {
            return cell;
        }
    }
    *dist.support.last().expect("nonempty support")
}

/// Permute-and-flip release over a protection set.
///
/// Flip probabilities follow `q(c) = exp(-eps * (d(x,c) - d_sm) / (2 D))`
/// with `d_sm` the distance to the nearest alternative, so the nearest
/// alternative flips with probability one. The true cell keeps its
/// normalized exponential weight (its raw weight exceeds one and cannot act
/// as a flip probability); the remaining mass falls to the alternatives by
/// the permute-and-flip order statistics, which shift probability toward
/// near alternatives compared with plain exponential weighting.
pub fn pf_distribution(
    true_cell: CellId,
    pls: &ProtectionLocationSet,
    epsilon: f64,
    map: &GridMap,
) -> Result<PerturbationDistribution> {
    let (support, dists, d_sm, diam) = mechanism_geometry(true_cell, pls, epsilon, map)?;
    let scale = epsilon / (2.0 * diam);
    let mut probs = vec![0.0; support.len()];
    let mut q = Vec::with_capacity(support.len() - 1);
    let mut alt_idx = Vec::with_capacity(support.len() - 1);
    // self-release weight relative to the alternatives, in the overflow-free
    // form 1 / (1 + sum exp(-scale * d))
    let mut alt_rel_sum = 0.0;
    for (i, (&cell, &d)) in support.iter().zip(&dists).enumerate() {
        if cell != true_cell {
            q.push((-scale * (d - d_sm)).exp());
            alt_idx.push(i);
            alt_rel_sum += (-scale * d).exp();
        }
    }
    let p_self = 1.0 / (1.0 + alt_rel_sum);
    probs[support.binary_search(&true_cell).unwrap()] = p_self;
    let conditional = permute_flip_pmf(&q);
    for (k, &i) in alt_idx.iter().enumerate() {
        probs[i] = (1.0 - p_self) * conditional[k];
    }
    normalize(&mut probs);
    Ok(PerturbationDistribution {
        true_cell,
        support,
        probs,
        mechanism_tag: MechanismTag::Pf,
    })
}

/// Exponential-mechanism baseline: `f(c) ~ exp(-eps * d(x,c) / (2 D))` over
/// the protection set.
pub fn exp_mechanism_distribution(
    true_cell: CellId,
    pls: &ProtectionLocationSet,
    epsilon: f64,
    map: &GridMap,
) -> Result<PerturbationDistribution> {
    let (support, dists, _, diam) = mechanism_geometry(true_cell, pls, epsilon, map)?;
    let scale = epsilon / (2.0 * diam);
    let mut probs: Vec<f64> = dists.iter().map(|&d| (-scale * d).exp()).collect();
    normalize(&mut probs);
    Ok(PerturbationDistribution {
        true_cell,
        support,
        probs,
        mechanism_tag: MechanismTag::Exp,
    })
}

/// Uniform release over the delta-location set (the uniform-budget baseline).
pub fn uniform_dls_distribution(
    true_cell: CellId,
    dset: &DeltaLocationSet,
) -> Result<PerturbationDistribution> {
    if !dset.contains(true_cell) {
        return Err(Error::InvalidArgument(format!(
            "true cell {true_cell} is not in the delta-location set"
        )));
    }
    let support = dset.cells().to_vec();
    let probs = vec![1.0 / support.len() as f64; support.len()];
    Ok(PerturbationDistribution {
        true_cell,
        support,
        probs,
        mechanism_tag: MechanismTag::Uniform,
    })
}

fn mechanism_geometry(
    true_cell: CellId,
    pls: &ProtectionLocationSet,
    epsilon: f64,
    map: &GridMap,
) -> Result<(Vec<CellId>, Vec<f64>, f64, f64)> {
    if pls.len() < 2 {
        return Err(Error::DegeneratePls);
    }
    if !pls.contains(true_cell) {
        return Err(Error::InvalidArgument(format!(
            "true cell {true_cell} is not in the protection set"
        )));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidArgument("epsilon must be nonnegative".into()));
    }
    let support = pls.cells.clone();
    let dists: Vec<f64> = support.iter().map(|&c| map.distance(true_cell, c)).collect();
    let d_sm = support
        .iter()
        .zip(&dists)
        .filter(|(&c, _)| c != true_cell)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    // distinct cells have distinct centers, so the diameter is positive
    let diam = pls.diameter_m.max(f64::MIN_POSITIVE);
    Ok((support, dists, d_sm, diam))
}

fn normalize(probs: &mut [f64]) {
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

/// Exact pmf of permute-and-flip over candidates with flip probabilities `q`
/// (each in `(0, 1]`, at least one equal to one): a uniformly random
/// permutation is scanned and candidate `i` is released on its first head.
///
/// `Pr[i] = q_i * Int_0^1 prod_{j != i} (1 - t q_j) dt`, integrated exactly
/// with Gauss-Legendre quadrature (the integrand is a polynomial).
pub(crate) fn permute_flip_pmf(q: &[f64]) -> Vec<f64> {
    let m = q.len();
    if m == 0 {
        return Vec::new();
    }
    if m == 1 {
        return vec![1.0];
    }
    let nodes = gauss_legendre_unit(m / 2 + 1);
    let mut probs = vec![0.0; m];
    let mut factors = vec![0.0; m];
    let mut prefix = vec![0.0; m + 1];
    let mut suffix = vec![0.0; m + 1];
    for &(t, w) in &nodes {
        for (f, &qi) in factors.iter_mut().zip(q) {
            *f = 1.0 - t * qi;
        }
        prefix[0] = 1.0;
        for i in 0..m {
            prefix[i + 1] = prefix[i] * factors[i];
        }
        suffix[m] = 1.0;
        for i in (0..m).rev() {
            suffix[i] = suffix[i + 1] * factors[i];
        }
        for i in 0..m {
            probs[i] += w * prefix[i] * suffix[i + 1];
        }
    }
    for (p, &qi) in probs.iter_mut().zip(q) {
        *p *= qi;
    }
    normalize(&mut probs);
    probs
}

/// Gauss-Legendre nodes and weights on `[0, 1]`, exact for polynomials of
/// degree `2n - 1`. Nodes are found by Newton iteration on the Legendre
/// recurrence.
fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // initial guess on [-1, 1]
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((x + 1.0) / 2.0, w / 2.0));
    }
    out
}

/// Legendre polynomial `P_n` and derivative at `x` via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// A full conditional law for one timestep: `f(. | x)` for every cell of the
/// release support; zero likelihood outside it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MechanismKernel {
    tag: MechanismTag,
    support: Vec<CellId>,
    dists: Vec<PerturbationDistribution>,
}

impl MechanismKernel {
    pub fn pf(pls: &ProtectionLocationSet, epsilon: f64, map: &GridMap) -> Result<Self> {
        Self::over_pls(MechanismTag::Pf, pls, epsilon, map)
    }

    pub fn exponential(pls: &ProtectionLocationSet, epsilon: f64, map: &GridMap) -> Result<Self> {
        Self::over_pls(MechanismTag::Exp, pls, epsilon, map)
    }

    pub fn over_pls(
        tag: MechanismTag,
        pls: &ProtectionLocationSet,
        epsilon: f64,
        map: &GridMap,
    ) -> Result<Self> {
        let build = match tag {
            MechanismTag::Pf => pf_distribution,
            MechanismTag::Exp => exp_mechanism_distribution,
            MechanismTag::Uniform => {
                return Err(Error::InvalidArgument(
                    "the uniform baseline runs over the delta-location set, not a protection set"
                        .into(),
                ))
            }
        };
        let dists = pls
            .cells
            .iter()
            .map(|&x| build(x, pls, epsilon, map))
            .collect::<Result<Vec<_>>>()?;
        Ok(MechanismKernel {
            tag,
            support: pls.cells.clone(),
            dists,
        })
    }

    pub fn uniform(dset: &DeltaLocationSet) -> Result<Self> {
        let support = dset.cells().to_vec();
        let dists = support
            .iter()
            .map(|&x| uniform_dls_distribution(x, dset))
            .collect::<Result<Vec<_>>>()?;
        Ok(MechanismKernel {
            tag: MechanismTag::Uniform,
            support,
            dists,
        })
    }

    /// Assembles a kernel from explicit conditionals, one per true cell.
    pub fn from_distributions(
        tag: MechanismTag,
        mut dists: Vec<PerturbationDistribution>,
    ) -> Self {
        dists.sort_by_key(|d| d.true_cell);
        MechanismKernel {
            tag,
            support: dists.iter().map(|d| d.true_cell).collect(),
            dists,
        }
    }

    pub fn tag(&self) -> MechanismTag {
        self.tag
    }

    /// Cells the kernel defines a conditional distribution for.
    pub fn support(&self) -> &[CellId] {
        &self.support
    }

    pub fn distribution_for(&self, true_cell: CellId) -> Option<&PerturbationDistribution> {
        self.support
            .binary_search(&true_cell)
            .ok()
            .map(|i| &self.dists[i])
    }

    pub fn distributions(&self) -> &[PerturbationDistribution] {
        &self.dists
    }
}

impl LikelihoodModel for MechanismKernel {
    fn likelihood(&self, released: CellId, given_true: CellId) -> f64 {
        match self.distribution_for(given_true) {
            Some(d) => d.prob_of(released),
            None => 0.0,
        }
    }
}

/// Exhaustively computes `max f(x'|x) / f(x'|y)` over a protection set for a
/// mechanism constructor. Returns infinity when some release has positive
/// probability under one true cell and zero under another (not
/// differentially private on the set).
pub fn verify_dp_ratio<F>(
    build: F,
    pls: &ProtectionLocationSet,
    epsilon: f64,
    map: &GridMap,
) -> Result<f64>
where
    F: Fn(CellId, &ProtectionLocationSet, f64, &GridMap) -> Result<PerturbationDistribution>,
{
    if pls.len() < 2 {
        return Err(Error::DegeneratePls);
    }
    let dists = pls
        .cells
        .iter()
        .map(|&x| build(x, pls, epsilon, map))
        .collect::<Result<Vec<_>>>()?;
    let mut max_ratio = 1.0f64;
    for a in &dists {
        for b in &dists {
            for &released in &pls.cells {
                let (fa, fb) = (a.prob_of(released), b.prob_of(released));
                if fa > 0.0 && fb == 0.0 {
                    return Ok(f64::INFINITY);
                }
                if fb > 0.0 {
                    max_ratio = max_ratio.max(fa / fb);
                }
            }
        }
    }
    Ok(max_ratio)
}
