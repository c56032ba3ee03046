//! Personalized trajectory privacy over gridded maps.
//!
//! The crate models user mobility with a Markov transition matrix, allocates
//! per-location privacy budgets from trajectory-derived sensitivity, searches
//! minimum-diameter protection location sets along rotated Hilbert curves,
//! releases perturbed locations through a permute-and-flip mechanism, and
//! evaluates the result against optimal and Bayesian inference attacks.

pub mod adversary;
pub mod budget;
pub mod error;
pub mod graph;
pub mod grid;
pub mod ingest;
pub mod mech;
pub mod metrics;
pub mod mobility;
pub mod pipeline;
pub mod pls;
pub mod scenario;

pub use error::{Error, Result};
pub use grid::{CellId, GridMap, HilbertIndex, MapConfig, Rotation};
pub use mech::MechanismTag;
pub use mobility::{ProbVector, Trajectory, TransitionMatrix};
pub use pls::ProtectionLocationSet;
