//! Discretized map: cell identifiers, planar geometry, and the Hilbert-curve
//! linearization used by the protection-set search.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Meters per degree of latitude under the equirectangular projection.
pub const METERS_PER_DEG_LAT: f64 = 111_320.0;

/// Dense row-major cell index; bijective with `(row, col)` for a given map.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl CellId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Map definition as loaded from a config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapConfig {
    pub rows: u32,
    pub cols: u32,
    pub cell_size_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub time_step_s: f64,
}

/// Uniform grid over a city map. Rows grow northward from the origin corner,
/// columns eastward. Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridMap {
    rows: u32,
    cols: u32,
    cell_size_m: f64,
    origin_lat: f64,
    origin_lon: f64,
    time_step_s: f64,
}

impl GridMap {
    pub fn new(
        rows: u32,
        cols: u32,
        cell_size_m: f64,
        origin: (f64, f64),
        time_step_s: f64,
    ) -> Result<Self> {
        if rows < 1 || cols < 1 {
            return Err(Error::InvalidArgument(
                "grid must have at least one row and one column".into(),
            ));
        }
        if cell_size_m <= 0.0 || !cell_size_m.is_finite() {
            return Err(Error::InvalidArgument("cell_size_m must be positive".into()));
        }
        if time_step_s <= 0.0 || !time_step_s.is_finite() {
            return Err(Error::InvalidArgument("time_step_s must be positive".into()));
        }
        Ok(GridMap {
            rows,
            cols,
            cell_size_m,
            origin_lat: origin.0,
            origin_lon: origin.1,
            time_step_s,
        })
    }

    pub fn from_config(cfg: &MapConfig) -> Result<Self> {
        GridMap::new(
            cfg.rows,
            cfg.cols,
            cfg.cell_size_m,
            (cfg.origin_lat, cfg.origin_lon),
            cfg.time_step_s,
        )
    }

    pub fn load_config(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: MapConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        GridMap::from_config(&cfg)
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn time_step_s(&self) -> f64 {
        self.time_step_s
    }

    pub fn n_cells(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn cell(&self, row: u32, col: u32) -> CellId {
        debug_assert!(row < self.rows && col < self.cols);
        CellId(row * self.cols + col)
    }

    pub fn row_col(&self, cell: CellId) -> (u32, u32) {
        (cell.0 / self.cols, cell.0 % self.cols)
    }

    pub fn contains(&self, cell: CellId) -> bool {
        (cell.0 as usize) < self.n_cells()
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> {
        (0..self.n_cells() as u32).map(CellId)
    }

    fn meters_per_deg_lon(&self) -> f64 {
        METERS_PER_DEG_LAT * self.origin_lat.to_radians().cos()
    }

    /// Cell containing the point. Cells are half-open: an interior boundary
    /// point belongs to the adjacent cell with the lower index.
    pub fn cell_of_coords(&self, lat: f64, lon: f64) -> Result<CellId> {
        let x = (lon - self.origin_lon) * self.meters_per_deg_lon();
        let y = (lat - self.origin_lat) * METERS_PER_DEG_LAT;
        self.cell_of_xy(x, y)
            .ok_or(Error::OutOfBounds { lat, lon })
    }

    /// Same rule in map meters, `(x, y)` from the origin corner.
    fn cell_of_xy(&self, x: f64, y: f64) -> Option<CellId> {
        let s = self.cell_size_m;
        if !(0.0..=self.cols as f64 * s).contains(&x) || !(0.0..=self.rows as f64 * s).contains(&y)
        {
            return None;
        }
        let col = ((x / s).ceil() as i64 - 1).max(0) as u32;
        let row = ((y / s).ceil() as i64 - 1).max(0) as u32;
        if col >= self.cols || row >= self.rows {
            return None;
        }
        Some(self.cell(row, col))
    }

    /// Cell-center position in meters relative to the origin corner, `(x, y)`
    /// with x along columns and y along rows.
    pub fn center_xy(&self, cell: CellId) -> (f64, f64) {
        let (row, col) = self.row_col(cell);
        (
            (col as f64 + 0.5) * self.cell_size_m,
            (row as f64 + 0.5) * self.cell_size_m,
        )
    }

    /// Geographic coordinates of the cell center.
    pub fn center_coords(&self, cell: CellId) -> (f64, f64) {
        let (x, y) = self.center_xy(cell);
        (
            self.origin_lat + y / METERS_PER_DEG_LAT,
            self.origin_lon + x / self.meters_per_deg_lon(),
        )
    }

    /// Euclidean distance between cell centers, in meters.
    pub fn distance(&self, a: CellId, b: CellId) -> f64 {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        let dr = ra as f64 - rb as f64;
        let dc = ca as f64 - cb as f64;
        self.cell_size_m * (dr * dr + dc * dc).sqrt()
    }

    pub fn hilbert_rank(&self, cell: CellId, h: &HilbertIndex) -> u64 {
        let (row, col) = self.row_col(cell);
        h.rank(row, col)
    }
}

/// Clockwise rotation of the Hilbert curve about the center of its square.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Rotation {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [
        Rotation::Deg0,
        Rotation::Deg90,
        Rotation::Deg180,
        Rotation::Deg270,
    ];

    pub fn degrees(self) -> u16 {
        match self {
            Rotation::Deg0 => 0,
            Rotation::Deg90 => 90,
            Rotation::Deg180 => 180,
            Rotation::Deg270 => 270,
        }
    }

    fn quarter_turns(self) -> u32 {
        (self.degrees() / 90) as u32
    }
}

/// Hilbert curve over the `2^order x 2^order` square that embeds a grid.
///
/// Base motif (order 1, no rotation), in `(row, col)`:
/// `(0,0) -> 0, (1,0) -> 1, (1,1) -> 2, (0,1) -> 3`.
/// A clockwise rotation of the curve ranks a cell at the rank its
/// counterclockwise-rotated image has on the unrotated curve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HilbertIndex {
    order: u32,
    rotation: Rotation,
}

impl HilbertIndex {
    pub fn new(order: u32, rotation: Rotation) -> Result<Self> {
        if order == 0 || order > 31 {
            return Err(Error::InvalidArgument(
                "hilbert order must be in 1..=31".into(),
            ));
        }
        Ok(HilbertIndex { order, rotation })
    }

    /// Smallest curve covering the map.
    pub fn covering(map: &GridMap, rotation: Rotation) -> Self {
        let need = map.rows().max(map.cols()).max(2);
        let order = 32 - (need - 1).leading_zeros();
        HilbertIndex { order, rotation }
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn side(&self) -> u32 {
        1u32 << self.order
    }

    /// Position of the grid point along the (possibly rotated) curve.
    pub fn rank(&self, row: u32, col: u32) -> u64 {
        let n = self.side();
        debug_assert!(row < n && col < n);
        let (mut r, mut c) = (row, col);
        for _ in 0..self.rotation.quarter_turns() {
            // counterclockwise quarter turn of the point
            let (nr, nc) = (n - 1 - c, r);
            r = nr;
            c = nc;
        }
        xy_to_rank(c, r, n)
    }

    /// Grid point at the given curve position (inverse of `rank`).
    pub fn point(&self, rank: u64) -> (u32, u32) {
        let n = self.side();
        let (x, y) = rank_to_xy(rank, n);
        let (mut r, mut c) = (y, x);
        for _ in 0..self.rotation.quarter_turns() {
            // clockwise quarter turn undoes the counterclockwise one
            let (nr, nc) = (c, n - 1 - r);
            r = nr;
            c = nc;
        }
        (r, c)
    }
}

fn xy_to_rank(mut x: u32, mut y: u32, n: u32) -> u64 {
    let mut rank: u64 = 0;
    let mut s = n / 2;
    while s > 0 {
        let rx = u32::from(x & s > 0);
        let ry = u32::from(y & s > 0);
        rank += (s as u64) * (s as u64) * ((3 * rx) ^ ry) as u64;
        rotate_quadrant(n, &mut x, &mut y, rx, ry);
        s /= 2;
    }
    rank
}

fn rank_to_xy(rank: u64, n: u32) -> (u32, u32) {
    let (mut x, mut y) = (0u32, 0u32);
    let mut t = rank;
    let mut s = 1u32;
    while s < n {
        let rx = ((t / 2) & 1) as u32;
        let ry = ((t ^ (t / 2)) & 1) as u32;
        rotate_quadrant(s, &mut x, &mut y, rx, ry);
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

fn rotate_quadrant(s: u32, x: &mut u32, y: &mut u32, rx: u32, ry: u32) {
    if ry == 0 {
        if rx == 1 {
            *x = s - 1 - *x;
            *y = s - 1 - *y;
        }
        std::mem::swap(x, y);
    }
}
