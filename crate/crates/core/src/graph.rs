//! Weighted directed graph over map cells capturing road-network reachability.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

/// Which neighbors count as "adjacent" to a sensitive location.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborMode {
    /// Out-neighbors only (directed reachability from the location).
    #[default]
    Out,
    /// Union of in- and out-neighbors.
    InOut,
}

/// Directed graph `G = <V, E>`; `e(i,j)` and `e(j,i)` are distinct edges.
/// Immutable in practice once built; no self-loops, weights strictly positive.
#[derive(Clone, Debug, Default)]
pub struct RoadGraph {
    vertices: BTreeSet<CellId>,
    out_edges: BTreeMap<CellId, BTreeMap<CellId, f64>>,
    in_neighbors: BTreeMap<CellId, BTreeSet<CellId>>,
}

impl RoadGraph {
    pub fn new() -> Self {
        RoadGraph::default()
    }

    pub fn with_vertices<I: IntoIterator<Item = CellId>>(vertices: I) -> Self {
        RoadGraph {
            vertices: vertices.into_iter().collect(),
            ..RoadGraph::default()
        }
    }

    /// Bidirectional 4-adjacency over the whole grid; edge weight is the
    /// cell-center distance.
    pub fn grid4(map: &GridMap) -> Self {
        let mut g = RoadGraph::with_vertices(map.cells());
        for cell in map.cells() {
            let (r, c) = map.row_col(cell);
            let mut push = |nr: u32, nc: u32| {
                let to = map.cell(nr, nc);
                g.add_edge(cell, to, map.distance(cell, to)).unwrap();
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < map.rows() {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < map.cols() {
                push(r, c + 1);
            }
        }
        g
    }

    pub fn add_vertex(&mut self, v: CellId) {
        self.vertices.insert(v);
    }

    pub fn add_edge(&mut self, from: CellId, to: CellId, weight_m: f64) -> Result<()> {
        if from == to {
            return Err(Error::InvalidEdge {
                from,
                to,
                reason: "self-loops are not allowed",
            });
        }
        if weight_m <= 0.0 || !weight_m.is_finite() {
            return Err(Error::InvalidEdge {
                from,
                to,
                reason: "edge weight must be positive",
            });
        }
        self.vertices.insert(from);
        self.vertices.insert(to);
        self.out_edges.entry(from).or_default().insert(to, weight_m);
        self.in_neighbors.entry(to).or_default().insert(from);
        Ok(())
    }

    pub fn contains_vertex(&self, v: CellId) -> bool {
        self.vertices.contains(&v)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out_edges.values().map(|m| m.len()).sum()
    }

    /// Out-neighbors `B_i = { j : (i -> j) in E }`.
    pub fn adjacent_nodes(&self, i: CellId) -> Result<BTreeSet<CellId>> {
        self.neighbors(i, NeighborMode::Out)
    }

    pub fn neighbors(&self, i: CellId, mode: NeighborMode) -> Result<BTreeSet<CellId>> {
        if !self.vertices.contains(&i) {
            return Err(Error::UnknownVertex(i));
        }
        let mut out: BTreeSet<CellId> = self
            .out_edges
            .get(&i)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default();
        if mode == NeighborMode::InOut {
            if let Some(ins) = self.in_neighbors.get(&i) {
                out.extend(ins.iter().copied());
            }
        }
        Ok(out)
    }

    pub fn edge_weight(&self, i: CellId, j: CellId) -> Result<f64> {
        self.out_edges
            .get(&i)
            .and_then(|m| m.get(&j).copied())
            .ok_or(Error::NoSuchEdge { from: i, to: j })
    }

    /// Parses an edge-list text file: one `from_index to_index [weight_m]` per
    /// line; `#` starts a comment. A missing weight defaults to the cell-center
    /// distance. All map cells become vertices, so isolated cells are valid.
    pub fn from_edge_list<R: BufRead>(reader: R, map: &GridMap) -> Result<Self> {
        let mut g = RoadGraph::with_vertices(map.cells());
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse_cell = |tok: Option<&str>| -> Result<CellId> {
                let tok = tok.ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: "expected `from to [weight]`".into(),
                })?;
                let raw: u32 = tok.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad cell index `{tok}`"),
                })?;
                let cell = CellId(raw);
                if !map.contains(cell) {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("cell index {raw} outside the map"),
                    });
                }
                Ok(cell)
            };
            let from = parse_cell(parts.next())?;
            let to = parse_cell(parts.next())?;
            let weight = match parts.next() {
                Some(tok) => tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad weight `{tok}`"),
                })?,
                None => map.distance(from, to),
            };
            g.add_edge(from, to, weight).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(g)
    }

    pub fn load_edge_list(path: &Path, map: &GridMap) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RoadGraph::from_edge_list(std::io::BufReader::new(file), map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> GridMap {
        GridMap::new(4, 4, 620.0, (0.0, 0.0), 177.0).unwrap()
    }

    #[test]
    fn out_neighbors_listed() {
        let mut g = RoadGraph::new();
        g.add_edge(CellId(1), CellId(2), 10.0).unwrap();
        g.add_edge(CellId(1), CellId(3), 10.0).unwrap();
        let b = g.adjacent_nodes(CellId(1)).unwrap();
        assert_eq!(b.into_iter().collect::<Vec<_>>(), vec![CellId(2), CellId(3)]);
    }

    #[test]
    fn isolated_vertex_has_no_neighbors() {
        let mut g = RoadGraph::new();
        g.add_vertex(CellId(5));
        assert!(g.adjacent_nodes(CellId(5)).unwrap().is_empty());
        assert!(matches!(
            g.adjacent_nodes(CellId(9)),
            Err(Error::UnknownVertex(_))
        ));
    }

    #[test]
    fn directionality_respected() {
        // e(4,9) present without e(9,4)
        let mut g = RoadGraph::new();
        g.add_edge(CellId(4), CellId(9), 620.0).unwrap();
        assert!(g.adjacent_nodes(CellId(4)).unwrap().contains(&CellId(9)));
        assert!(!g.adjacent_nodes(CellId(9)).unwrap().contains(&CellId(4)));
        assert!(g
            .neighbors(CellId(9), NeighborMode::InOut)
            .unwrap()
            .contains(&CellId(4)));
    }

    #[test]
    fn edge_weight_passthrough_and_missing() {
        let mut g = RoadGraph::new();
        g.add_edge(CellId(0), CellId(1), 700.0).unwrap();
        assert_eq!(g.edge_weight(CellId(0), CellId(1)).unwrap(), 700.0);
        assert!(matches!(
            g.edge_weight(CellId(1), CellId(0)),
            Err(Error::NoSuchEdge { .. })
        ));
    }

    #[test]
    fn self_loops_rejected() {
        let mut g = RoadGraph::new();
        assert!(g.add_edge(CellId(3), CellId(3), 1.0).is_err());
        assert!(g.add_edge(CellId(3), CellId(4), 0.0).is_err());
    }

    #[test]
    fn adjacency_consistent_with_edge_weight() {
        let g = RoadGraph::grid4(&map());
        for v in map().cells() {
            for j in map().cells() {
                let listed = g.adjacent_nodes(v).unwrap().contains(&j);
                assert_eq!(listed, g.edge_weight(v, j).is_ok());
            }
        }
    }

    #[test]
    fn grid4_default_weights_are_center_distances() {
        let m = map();
        let g = RoadGraph::grid4(&m);
        assert_eq!(g.edge_weight(m.cell(0, 0), m.cell(0, 1)).unwrap(), 620.0);
        assert_eq!(g.edge_count(), 2 * (2 * 4 * 3));
    }

    #[test]
    fn edge_list_parsing() {
        let m = map();
        let text = "0 1\n1 0 700.0\n# comment\n2 3 55.5 # trailing\n";
        let g = RoadGraph::from_edge_list(std::io::Cursor::new(text), &m).unwrap();
        assert_eq!(g.edge_weight(CellId(0), CellId(1)).unwrap(), 620.0);
        assert_eq!(g.edge_weight(CellId(1), CellId(0)).unwrap(), 700.0);
        assert_eq!(g.edge_weight(CellId(2), CellId(3)).unwrap(), 55.5);
        assert_eq!(g.vertex_count(), 16);

        let bad = RoadGraph::from_edge_list(std::io::Cursor::new("0 99\n"), &m);
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
    }
}
