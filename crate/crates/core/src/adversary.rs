//! Inference attacks: prior propagation through the transition matrix,
//! posterior updates from released cells, and optimal / Bayesian inference
//! over whole trajectories.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use crate::mobility::{posterior, propagate_prior, LikelihoodModel, ProbVector, TransitionMatrix};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Optimal,
    Bayesian,
}

impl std::str::FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(AttackMode::Optimal),
            "bayesian" => Ok(AttackMode::Bayesian),
            other => Err(Error::InvalidArgument(format!(
                "unknown attack mode `{other}` (expected optimal or bayesian)"
            ))),
        }
    }
}

/// One attack result. `expected_error_m` is the posterior-expected distance
/// of the guess; `success_prob` is the posterior mass at the guess (the
/// attacker's own confidence of having hit the true cell).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub inferred: CellId,
    pub expected_error_m: f64,
    pub success_prob: f64,
}

/// Guess minimizing the posterior-expected distance over the whole map; ties
/// fall to the lower cell id. Returns the guess and the attained minimum.
pub fn optimal_inference(posterior: &ProbVector, map: &GridMap) -> (CellId, f64) {
    let mut best = (CellId(0), f64::INFINITY);
    for guess in map.cells() {
        let mut acc = 0.0;
        for (i, &p) in posterior.as_slice().iter().enumerate() {
            if p > 0.0 {
                acc += p * map.distance(guess, CellId(i as u32));
            }
        }
        if acc < best.1 {
            best = (guess, acc);
        }
    }
    best
}

/// Maximum-posterior guess; ties fall to the lower cell id.
pub fn bayesian_inference(posterior: &ProbVector) -> CellId {
    let mut best = (CellId(0), f64::NEG_INFINITY);
    for (i, &p) in posterior.as_slice().iter().enumerate() {
        if p > best.1 {
            best = (CellId(i as u32), p);
        }
    }
    best.0
}

/// Runs the chosen inference on a posterior.
pub fn attack(posterior: &ProbVector, mode: AttackMode, map: &GridMap) -> AttackOutcome {
    let inferred = match mode {
        AttackMode::Optimal => optimal_inference(posterior, map).0,
        AttackMode::Bayesian => bayesian_inference(posterior),
    };
    let expected_error_m = posterior
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &p)| p * map.distance(inferred, CellId(i as u32)))
        .sum();
    AttackOutcome {
        inferred,
        expected_error_m,
        success_prob: posterior.get(inferred),
    }
}

/// Stepping attacker holding the mobility profile and the inferred trail.
pub struct AttackerState<'a> {
    transition: &'a TransitionMatrix,
    posterior: ProbVector,
    inferred: Vec<CellId>,
}

impl<'a> AttackerState<'a> {
    pub fn new(transition: &'a TransitionMatrix, initial_posterior: ProbVector) -> Self {
        AttackerState {
            transition,
            posterior: initial_posterior,
            inferred: Vec::new(),
        }
    }

    pub fn posterior(&self) -> &ProbVector {
        &self.posterior
    }

    pub fn inferred_so_far(&self) -> &[CellId] {
        &self.inferred
    }

    /// One observation: propagate the prior, apply Bayes with the known
    /// mechanism, infer.
    pub fn observe<L: LikelihoodModel + ?Sized>(
        &mut self,
        released: CellId,
        mechanism: &L,
        mode: AttackMode,
        map: &GridMap,
    ) -> Result<AttackOutcome> {
        let prior = propagate_prior(&self.posterior, self.transition)?;
        self.posterior = posterior(&prior, released, mechanism)?;
        let outcome = attack(&self.posterior, mode, map);
        self.inferred.push(outcome.inferred);
        Ok(outcome)
    }
}

/// Attacks a whole released trajectory with per-step mechanism knowledge.
/// Errors carry the failing timestep index.
pub fn attack_trajectory<L: LikelihoodModel>(
    released: &[CellId],
    mechanisms: &[L],
    initial_posterior: &ProbVector,
    transition: &TransitionMatrix,
    mode: AttackMode,
    map: &GridMap,
) -> Result<Vec<AttackOutcome>> {
    if released.len() != mechanisms.len() {
        return Err(Error::DimensionMismatch {
            expected: released.len(),
            actual: mechanisms.len(),
        });
    }
    let mut state = AttackerState::new(transition, initial_posterior.clone());
    released
        .iter()
        .zip(mechanisms)
        .enumerate()
        .map(|(t, (&r, mech))| {
            state
                .observe(r, mech, mode, map)
                .map_err(|e| e.at_timestep(t as u32))
        })
        .collect()
}
