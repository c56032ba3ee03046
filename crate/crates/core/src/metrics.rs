//! Evaluation quantities: exact location privacy and quality-of-service
//! loss, plus the Monte Carlo parameter sweep harness.

use crate::adversary::{attack, AttackMode};
use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::mech::MechanismKernel;
use crate::mobility::{posterior, LikelihoodModel, ProbVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

pub use crate::scenario::run_sweep;

/// Exact location privacy
/// `p = sum_{x, x', xhat} Pr(x) f(x'|x) h(xhat|x') d(x, xhat)`
/// with `h` the deterministic attack map for the chosen mode. Triple
/// summation, no sampling; every prior-supported cell must have a
/// distribution in the kernel.
pub fn privacy_metric(
    prior: &ProbVector,
    kernel: &MechanismKernel,
    mode: AttackMode,
    map: &GridMap,
) -> Result<f64> {
    check_coverage(prior, kernel)?;
    // released support is shared across the kernel's conditionals
    let mut released_cells = std::collections::BTreeSet::new();
    for dist in kernel.distributions() {
        released_cells.extend(dist.support.iter().copied());
    }
    let mut p = 0.0;
    for &released in &released_cells {
        let post = match posterior(prior, released, kernel) {
            Ok(post) => post,
            // a release no prior-supported cell can emit contributes nothing
            Err(Error::ZeroEvidence { .. }) => continue,
            Err(e) => return Err(e),
        };
        let guess = attack(&post, mode, map).inferred;
        for x in prior.support() {
            p += prior.get(x) * kernel.likelihood(released, x) * map.distance(x, guess);
        }
    }
    Ok(p)
}

/// Exact quality-of-service loss
/// `q = sum_{x, x'} Pr(x) f(x'|x) d(x, x')`.
pub fn qos_loss(prior: &ProbVector, kernel: &MechanismKernel, map: &GridMap) -> Result<f64> {
    check_coverage(prior, kernel)?;
    let mut q = 0.0;
    for x in prior.support() {
        let dist = kernel
            .distribution_for(x)
            .expect("coverage checked above");
        q += prior.get(x) * dist.expected_distance(map);
    }
    Ok(q)
}

fn check_coverage(prior: &ProbVector, kernel: &MechanismKernel) -> Result<()> {
    for x in prior.support() {
        if kernel.distribution_for(x).is_none() {
            return Err(Error::MissingMechanism(x));
        }
    }
    Ok(())
}

/// One grid point of a sweep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepGridPoint {
    pub epsilon_s: f64,
    pub e_m: f64,
    pub delta: f64,
}

/// One output row: a grid point under one seed, aggregated over trials.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub epsilon_s: f64,
    pub e_m: f64,
    pub delta: f64,
    pub seed: u64,
    pub p_mean: f64,
    pub p_std: f64,
    pub q_mean: f64,
    pub q_std: f64,
    pub dset_size_mean: f64,
    pub pls_diam_mean: f64,
    pub attack_success_mean: f64,
}

/// A grid point that could not be evaluated; the sweep carries on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFailure {
    pub scenario: String,
    pub epsilon_s: f64,
    pub e_m: f64,
    pub delta: f64,
    pub seed: u64,
    pub message: String,
}

pub const SWEEP_CSV_HEADER: &str = "scenario,epsilon_s,e_m,delta,seed,p_mean,p_std,q_mean,\
q_std,dset_size_mean,pls_diam_mean,attack_success_mean";

/// Writes rows in the fixed column order, optionally preceded by `#` comment
/// lines (tool version, config fingerprint).
pub fn write_sweep_csv<W: Write>(
    rows: &[SweepRow],
    comments: &[String],
    mut w: W,
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.epsilon_s,
            r.e_m,
            r.delta,
            r.seed,
            r.p_mean,
            r.p_std,
            r.q_mean,
            r.q_std,
            r.dset_size_mean,
            r.pls_diam_mean,
            r.attack_success_mean
        )?;
    }
    Ok(())
}

/// Sample mean and the unbiased standard deviation (zero for one sample).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
