//! Mobility modeling: trajectories, the location transition probability
//! matrix, prior/posterior propagation, and the delta-location set.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// A user's cell trajectory at discrete timesteps (strictly increasing).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    user_id: String,
    steps: Vec<(u32, CellId)>,
}

impl Trajectory {
    pub fn new(user_id: impl Into<String>, steps: Vec<(u32, CellId)>) -> Result<Self> {
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument(
                "trajectory timesteps must be strictly increasing".into(),
            ));
        }
        Ok(Trajectory {
            user_id: user_id.into(),
            steps,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn steps(&self) -> &[(u32, CellId)] {
        &self.steps
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.steps.iter().map(|&(_, c)| c)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `[first_t, last_t + 1)`, the default window for stay-duration ratios.
    pub fn span(&self) -> Option<(u32, u32)> {
        match (self.steps.first(), self.steps.last()) {
            (Some(&(a, _)), Some(&(b, _))) => Some((a, b + 1)),
            _ => None,
        }
    }
}

/// Probability distribution over map cells: entries nonnegative, sum 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates nonnegativity and that the sum is within 1e-9 of one, then
    /// rescales exactly so downstream code sees a sum within 1e-12.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidProbability("empty vector".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProbability(
                "entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbability(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self::rescaled(p, sum))
    }

    /// Normalizes arbitrary nonnegative weights with a positive sum.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidProbability("empty vector".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProbability(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Self::rescaled(w, sum))
    }

    fn rescaled(mut p: Vec<f64>, sum: f64) -> Self {
        for v in &mut p {
            *v /= sum;
        }
        ProbVector(p)
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, cell: CellId) -> Self {
        let mut p = vec![0.0; n];
        p[cell.index()] = 1.0;
        ProbVector(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, cell: CellId) -> f64 {
        self.0[cell.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Cells with strictly positive mass.
    pub fn support(&self) -> impl Iterator<Item = CellId> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| CellId(i as u32))
    }

    /// Conditions the vector on a cell subset (restrict and renormalize).
    pub fn condition_on(&self, cells: &[CellId]) -> Result<ProbVector> {
        let mut out = vec![0.0; self.len()];
        let mut mass = 0.0;
        for &c in cells {
            out[c.index()] = self.get(c);
            mass += self.get(c);
        }
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Self::rescaled(out, mass))
    }
}

/// Transition counts `N` and the row-stochastic transition probability
/// matrix `M` derived from them, both dense row-major.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    n: usize,
    counts: Vec<u64>,
    probs: Vec<f64>,
}

impl TransitionMatrix {
    /// Counts consecutive step pairs across all trajectories and normalizes
    /// per row. Rows never visited become one-hot self-transitions.
    pub fn from_trajectories(trajectories: &[Trajectory], map: &GridMap) -> Result<Self> {
        Self::from_trajectories_smoothed(trajectories, map, 0.0)
    }

    /// Adds `lambda` pseudo-counts to every entry before normalizing; useful
    /// for sparse logs. `lambda = 0` reproduces the raw frequencies.
    pub fn from_trajectories_smoothed(
        trajectories: &[Trajectory],
        map: &GridMap,
        lambda: f64,
    ) -> Result<Self> {
        let n = map.n_cells();
        if !(0.0..f64::INFINITY).contains(&lambda) {
            return Err(Error::InvalidArgument("smoothing must be nonnegative".into()));
        }
        let mut counts = vec![0u64; n * n];
        let mut any_pair = false;
        for tr in trajectories {
            for w in tr.steps().windows(2) {
                let (from, to) = (w[0].1, w[1].1);
                counts[from.index() * n + to.index()] += 1;
                any_pair = true;
            }
        }
        if !any_pair {
            return Err(Error::EmptyInput(
                "need at least one trajectory with two or more steps",
            ));
        }
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            let row = &counts[i * n..(i + 1) * n];
            let row_sum: u64 = row.iter().sum();
            let denom = row_sum as f64 + lambda * n as f64;
            if denom > 0.0 {
                for j in 0..n {
                    probs[i * n + j] = (row[j] as f64 + lambda) / denom;
                }
            } else {
                probs[i * n + i] = 1.0;
            }
        }
        Ok(TransitionMatrix { n, counts, probs })
    }

    pub fn identity(n: usize) -> Self {
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            probs[i * n + i] = 1.0;
        }
        TransitionMatrix {
            n,
            counts: vec![0; n * n],
            probs,
        }
    }

    /// Every row uniform: the "no correlation" propagation baseline.
    pub fn uniform(n: usize) -> Self {
        TransitionMatrix {
            n,
            counts: vec![0; n * n],
            probs: vec![1.0 / n as f64; n * n],
        }
    }

    /// Builds directly from row-major probabilities; rows must be stochastic.
    pub fn from_probs(n: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: probs.len(),
            });
        }
        for i in 0..n {
            let row = &probs[i * n..(i + 1) * n];
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidProbability(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidProbability(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(TransitionMatrix {
            n,
            counts: vec![0; n * n],
            probs,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn count(&self, from: CellId, to: CellId) -> u64 {
        self.counts[from.index() * self.n + to.index()]
    }

    pub fn prob(&self, from: CellId, to: CellId) -> f64 {
        self.probs[from.index() * self.n + to.index()]
    }

    pub fn row(&self, from: CellId) -> &[f64] {
        &self.probs[from.index() * self.n..(from.index() + 1) * self.n]
    }

    /// Writes the probabilities as a dense row-major CSV, one row per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.n {
            let row: Vec<String> = self.probs[i * self.n..(i + 1) * self.n]
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a dense probability CSV written by [`write_csv`]. Lines starting
    /// with `#` are skipped. Counts are not recoverable and read back as zero.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("bad probability `{tok}`"),
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyInput("transition matrix CSV"));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: rows.iter().map(|r| r.len()).find(|&l| l != n).unwrap(),
            });
        }
        TransitionMatrix::from_probs(n, rows.concat())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        TransitionMatrix::read_csv(std::io::BufReader::new(file))
    }
}

/// Anything that yields the perturbation likelihood `f(released | true)`.
pub trait LikelihoodModel {
    fn likelihood(&self, released: CellId, given_true: CellId) -> f64;
}

/// Prior propagation `p(t)- = p(t-1)+ M` (row vector times matrix).
pub fn propagate_prior(posterior_prev: &ProbVector, m: &TransitionMatrix) -> Result<ProbVector> {
    if posterior_prev.len() != m.n_cells() {
        return Err(Error::DimensionMismatch {
            expected: m.n_cells(),
            actual: posterior_prev.len(),
        });
    }
    let n = m.n_cells();
    let mut out = vec![0.0; n];
    for (i, &pi) in posterior_prev.as_slice().iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        let row = &m.probs[i * n..(i + 1) * n];
        for (o, &mij) in out.iter_mut().zip(row) {
            *o += pi * mij;
        }
    }
    ProbVector::from_weights(out)
}

/// Bayes update after observing a released cell.
pub fn posterior<L: LikelihoodModel + ?Sized>(
    prior: &ProbVector,
    released: CellId,
    mechanism: &L,
) -> Result<ProbVector> {
    let mut weights = vec![0.0; prior.len()];
    let mut evidence = 0.0;
    for (i, &p) in prior.as_slice().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let w = p * mechanism.likelihood(released, CellId(i as u32));
        weights[i] = w;
        evidence += w;
    }
    if evidence <= 0.0 {
        return Err(Error::ZeroEvidence {
            released,
            timestep: None,
        });
    }
    ProbVector::from_weights(weights)
}

/// The minimum-cardinality set of cells whose prior mass reaches `1 - delta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaLocationSet {
    cells: Vec<CellId>,
    delta: f64,
    covered_mass: f64,
}

impl DeltaLocationSet {
    /// Rebuilds a set from audited parts (replay of release records). The
    /// delta is not recoverable and reads back as zero.
    pub(crate) fn from_parts(mut cells: Vec<CellId>, covered_mass: f64) -> Self {
        cells.sort_unstable();
        cells.dedup();
        DeltaLocationSet {
            cells,
            delta: 0.0,
            covered_mass,
        }
    }

    /// Cells in ascending id order.
    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn covered_mass(&self) -> f64 {
        self.covered_mass
    }

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

/// Greedily selects cells in descending prior order (ties by ascending id)
/// until the cumulative mass reaches `1 - delta`. The greedy prefix is a
/// minimum-cardinality qualifying set because any k cells carry at most the
/// top-k mass.
pub fn delta_location_set(prior: &ProbVector, delta: f64) -> Result<DeltaLocationSet> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
    }
    let mut order: Vec<u32> = (0..prior.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (prior.get(CellId(a)), prior.get(CellId(b)));
        pb.partial_cmp(&pa).unwrap().then(a.cmp(&b))
    });
    let target = 1.0 - delta;
    let mut cells = Vec::new();
    let mut mass = 0.0;
    for id in order {
        cells.push(CellId(id));
        mass += prior.get(CellId(id));
        if mass >= target {
            break;
        }
    }
    cells.sort_unstable();
    Ok(DeltaLocationSet {
        cells,
        delta,
        covered_mass: mass,
    })
}

/// Nearest in-set substitute for a possibly excluded true location; ties by
/// ascending cell id. Returns the true cell itself when it is in the set.
pub fn surrogate_location(true_cell: CellId, dset: &DeltaLocationSet, map: &GridMap) -> CellId {
    if dset.contains(true_cell) {
        return true_cell;
    }
    dset.cells
        .iter()
        .copied()
        .min_by(|&a, &b| {
            map.distance(a, true_cell)
                .partial_cmp(&map.distance(b, true_cell))
                .unwrap()
                .then(a.cmp(&b))
        })
        .expect("surrogate over empty delta-location set")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(rows: u32, cols: u32) -> GridMap {
        GridMap::new(rows, cols, 620.0, (0.0, 0.0), 177.0).unwrap()
    }

    fn traj(cells: &[u32]) -> Trajectory {
        Trajectory::new(
            "u",
            cells
                .iter()
                .enumerate()
                .map(|(t, &c)| (t as u32, CellId(c)))
                .collect(),
        )
        .unwrap()
    }

    struct TableLikelihood {
        // rows: given_true, cols: released
        n: usize,
        f: Vec<f64>,
    }

    impl LikelihoodModel for TableLikelihood {
        fn likelihood(&self, released: CellId, given_true: CellId) -> f64 {
            self.f[given_true.index() * self.n + released.index()]
        }
    }

    #[test]
    fn transition_counts_and_normalization() {
        let m = map(1, 4);
        let tm = TransitionMatrix::from_trajectories(&[traj(&[0, 1, 0, 1])], &m).unwrap();
        assert_eq!(tm.count(CellId(0), CellId(1)), 2);
        assert_eq!(tm.count(CellId(1), CellId(0)), 1);
        assert_eq!(tm.prob(CellId(0), CellId(1)), 1.0);
        // unvisited rows self-transition
        assert_eq!(tm.prob(CellId(2), CellId(2)), 1.0);
        assert_eq!(tm.prob(CellId(3), CellId(3)), 1.0);
    }

    #[test]
    fn counts_add_across_trajectories() {
        let m = map(1, 3);
        let a = traj(&[0, 1]);
        let b = traj(&[0, 1, 2]);
        let tm = TransitionMatrix::from_trajectories(&[a, b], &m).unwrap();
        assert_eq!(tm.count(CellId(0), CellId(1)), 2);
        assert_eq!(tm.count(CellId(1), CellId(2)), 1);
    }

    #[test]
    fn row_normalization_matches_counts() {
        // counts row [2, 1, 1] -> probs [0.5, 0.25, 0.25]
        let m = map(1, 3);
        let tm = TransitionMatrix::from_trajectories(&[traj(&[0, 0, 0, 1, 0, 2, 0])], &m).unwrap();
        assert_eq!(tm.row(CellId(0)), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn empty_input_rejected() {
        let m = map(1, 3);
        assert!(matches!(
            TransitionMatrix::from_trajectories(&[traj(&[0])], &m),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn propagate_one_hot_returns_row() {
        let m = map(1, 3);
        let tm = TransitionMatrix::from_trajectories(&[traj(&[0, 1, 0, 2])], &m).unwrap();
        let p = propagate_prior(&ProbVector::one_hot(3, CellId(0)), &tm).unwrap();
        assert_eq!(p.as_slice(), tm.row(CellId(0)));
    }

    #[test]
    fn propagate_identity_is_noop() {
        let tm = TransitionMatrix::identity(4);
        let p = ProbVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(propagate_prior(&p, &tm).unwrap().as_slice(), p.as_slice());
    }

    #[test]
    fn propagate_hand_example() {
        let tm = TransitionMatrix::from_probs(2, vec![0.5, 0.5, 0.0, 1.0]).unwrap();
        let p = propagate_prior(&ProbVector::uniform(2), &tm).unwrap();
        assert!((p.get(CellId(0)) - 0.25).abs() < 1e-12);
        assert!((p.get(CellId(1)) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn posterior_identity_mechanism_is_one_hot() {
        let ident = TableLikelihood {
            n: 3,
            f: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        };
        let prior = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let post = posterior(&prior, CellId(1), &ident).unwrap();
        assert_eq!(post.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn posterior_hand_example() {
        // prior uniform over {a, b}, f(r|a) = 0.6, f(r|b) = 0.2 -> [0.75, 0.25]
        let f = TableLikelihood {
            n: 2,
            f: vec![0.6, 0.4, 0.2, 0.8],
        };
        let prior = ProbVector::uniform(2);
        let post = posterior(&prior, CellId(0), &f).unwrap();
        assert!((post.get(CellId(0)) - 0.75).abs() < 1e-12);
        assert!((post.get(CellId(1)) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn posterior_preserves_point_support() {
        let f = TableLikelihood {
            n: 2,
            f: vec![0.5, 0.5, 0.9, 0.1],
        };
        let prior = ProbVector::one_hot(2, CellId(0));
        let post = posterior(&prior, CellId(1), &f).unwrap();
        assert_eq!(post.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn posterior_zero_evidence() {
        let f = TableLikelihood {
            n: 2,
            f: vec![0.0, 1.0, 0.0, 1.0],
        };
        let prior = ProbVector::uniform(2);
        assert!(matches!(
            posterior(&prior, CellId(0), &f),
            Err(Error::ZeroEvidence { .. })
        ));
    }

    #[test]
    fn delta_set_greedy_example() {
        let prior = ProbVector::new(vec![0.5, 0.3, 0.1, 0.05, 0.05]).unwrap();
        let d = delta_location_set(&prior, 0.2).unwrap();
        assert_eq!(d.cells(), &[CellId(0), CellId(1)]);
        assert!((d.covered_mass() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tiny_delta_takes_all_support() {
        let prior = ProbVector::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let d = delta_location_set(&prior, 1e-9).unwrap();
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn uniform_tie_break_by_cell_id() {
        let prior = ProbVector::uniform(4);
        let d = delta_location_set(&prior, 0.5).unwrap();
        assert_eq!(d.cells(), &[CellId(0), CellId(1)]);
    }

    #[test]
    fn surrogate_cases() {
        let m = map(1, 8);
        let prior = ProbVector::new(vec![0.0, 0.4, 0.0, 0.4, 0.0, 0.2, 0.0, 0.0]).unwrap();
        let d = delta_location_set(&prior, 0.3).unwrap();
        assert_eq!(d.cells(), &[CellId(1), CellId(3)]);
        assert_eq!(surrogate_location(CellId(1), &d, &m), CellId(1));
        // equidistant between 1 and 3: lower id wins
        assert_eq!(surrogate_location(CellId(2), &d, &m), CellId(1));
        // unique nearest
        assert_eq!(surrogate_location(CellId(4), &d, &m), CellId(3));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = map(2, 2);
        let tm =
            TransitionMatrix::from_trajectories(&[traj(&[0, 1, 3, 2, 0, 1])], &m).unwrap();
        let mut buf = Vec::new();
        tm.write_csv(&mut buf).unwrap();
        let back = TransitionMatrix::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.n_cells(), 4);
        for i in 0..4 {
            assert_eq!(back.row(CellId(i)), tm.row(CellId(i)));
        }
    }

    proptest! {
        #[test]
        fn propagation_preserves_mass(
            seed in 0u64..1000,
            n in 2usize..10,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut probs = vec![0.0; n * n];
            for i in 0..n {
                let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let s: f64 = row.iter().sum();
                for j in 0..n {
                    probs[i * n + j] = row[j] / s;
                }
            }
            let tm = TransitionMatrix::from_probs(n, probs).unwrap();
            let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let p = ProbVector::from_weights(w).unwrap();
            let out = propagate_prior(&p, &tm).unwrap();
            let sum: f64 = out.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn posterior_matches_brute_force(
            seed in 0u64..1000,
            n in 2usize..8,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0xabcd);
            let prior = ProbVector::from_weights(
                (0..n).map(|_| rng.random::<f64>()).collect(),
            ).unwrap();
            let f: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let model = TableLikelihood { n, f: f.clone() };
            let released = CellId(rng.random_range(0..n as u32));
            let post = posterior(&prior, released, &model).unwrap();
            // independent brute-force normalization
            let mut brute: Vec<f64> = (0..n)
                .map(|i| prior.get(CellId(i as u32)) * f[i * n + released.index()])
                .collect();
            let s: f64 = brute.iter().sum();
            for v in &mut brute { *v /= s; }
            for (i, b) in brute.iter().enumerate() {
                prop_assert!((post.get(CellId(i as u32)) - b).abs() < 1e-12);
            }
        }

        #[test]
        fn delta_set_is_minimal(
            seed in 0u64..400,
            n in 2usize..12,
            delta in 0.01f64..0.9,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x77);
            let prior = ProbVector::from_weights(
                (0..n).map(|_| rng.random::<f64>()).collect(),
            ).unwrap();
            let d = delta_location_set(&prior, delta).unwrap();
            let target = 1.0 - delta;
            prop_assert!(d.covered_mass() >= target);
            // exhaustive subset search: no smaller subset reaches the target
            for mask in 0u32..(1 << n) {
                if (mask.count_ones() as usize) < d.len() {
                    let mass: f64 = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| prior.get(CellId(i as u32)))
                        .sum();
                    prop_assert!(mass < target);
                }
            }
        }

        #[test]
        fn delta_set_size_non_increasing_in_delta(
            seed in 0u64..200,
            n in 2usize..24,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x99);
            let prior = ProbVector::from_weights(
                (0..n).map(|_| rng.random::<f64>()).collect(),
            ).unwrap();
            let mut last = usize::MAX;
            for delta in [0.01, 0.05, 0.1, 0.2, 0.4] {
                let d = delta_location_set(&prior, delta).unwrap();
                prop_assert!(d.len() <= last);
                last = d.len();
            }
        }
    }
}
