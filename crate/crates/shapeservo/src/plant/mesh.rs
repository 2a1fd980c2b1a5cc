//! Sheet meshes built from structural + shear springs.
//!
//! Three stock shapes are available: a sheet with a central slit, a sheet
//! with a square hole, and an L-shaped sheet. All of them are node grids in
//! the z = 0 plane; incisions are realized by omitting nodes or by omitting
//! the springs that would cross the cut.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    /// Rest length in meters, > 0.
    pub rest_length: f64,
    /// Stiffness in N/m, > 0.
    pub stiffness: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<Vector3<f64>>,
    pub springs: Vec<Spring>,
}

impl Mesh {
    /// Validates rest lengths, stiffnesses, index ranges and duplicates.
    /// Connectivity is a property of the stock shapes and is checked by
    /// `build_mesh`, not here: test rigs are allowed to assemble
    /// disconnected meshes on purpose.
    pub fn new(nodes: Vec<Vector3<f64>>, springs: Vec<Spring>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config("mesh has no nodes".into()));
        }
        let mut seen = HashSet::new();
        for (i, s) in springs.iter().enumerate() {
            if s.a >= nodes.len() || s.b >= nodes.len() {
                return Err(Error::Config(format!(
                    "spring {i} references node out of range ({}, {})",
                    s.a, s.b
                )));
            }
            if s.a == s.b {
                return Err(Error::Config(format!("spring {i} connects node {} to itself", s.a)));
            }
            if !(s.rest_length > 0.0) {
                return Err(Error::Config(format!(
                    "spring {i} has non-positive rest length {}",
                    s.rest_length
                )));
            }
            if !(s.stiffness > 0.0) {
                return Err(Error::Config(format!(
                    "spring {i} has non-positive stiffness {}",
                    s.stiffness
                )));
            }
            let key = (s.a.min(s.b), s.a.max(s.b));
            if !seen.insert(key) {
                return Err(Error::Config(format!(
                    "duplicate spring between nodes {} and {}",
                    key.0, key.1
                )));
            }
        }
        Ok(Mesh { nodes, springs })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for s in &self.springs {
            adj[s.a].push(s.b);
            adj[s.b].push(s.a);
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        visited.iter().all(|&v| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SheetShape {
    SlitSheet,
    SquareHoleSheet,
    #[serde(alias = "L-sheet")]
    LSheet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSpec {
    pub shape: SheetShape,
    /// Nodes per side of the bounding grid; >= 3.
    pub resolution: usize,
    /// Grid spacing in meters.
    pub spacing: f64,
    /// Spring stiffness in N/m, shared by structural and shear springs.
    pub stiffness: f64,
    /// Side length (in nodes) of the removed block for `square-hole-sheet`.
    #[serde(default)]
    pub hole_size: Option<usize>,
    /// Leg thickness (in nodes) for `l-sheet`.
    #[serde(default)]
    pub leg_thickness: Option<usize>,
}

impl MeshSpec {
    fn validate(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(Error::Config(format!(
                "mesh resolution must be >= 3, got {}",
                self.resolution
            )));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::Config(format!("mesh spacing must be > 0, got {}", self.spacing)));
        }
        if !(self.stiffness > 0.0) {
            return Err(Error::Config(format!(
                "mesh stiffness must be > 0, got {}",
                self.stiffness
            )));
        }
        Ok(())
    }

    /// Hole side defaults to roughly half the resolution, adjusted so the
    /// hole sits centered on the grid.
    pub fn hole_size(&self) -> usize {
        self.hole_size.unwrap_or_else(|| {
            let mut h = (self.resolution / 2).max(1);
            if (self.resolution - h) % 2 != 0 {
                h = h.saturating_sub(1).max(1);
            }
            h
        })
    }

    pub fn leg_thickness(&self) -> usize {
        self.leg_thickness.unwrap_or((self.resolution + 1) / 2)
    }
}

/// Occupancy-grid construction shared by all three shapes. A cell (row, col)
/// carries a node; structural springs join side neighbors, shear springs run
/// across every fully occupied quad.
struct GridBuilder {
    rows: usize,
    cols: usize,
    index: Vec<Option<usize>>,
    nodes: Vec<Vector3<f64>>,
    spacing: f64,
}

impl GridBuilder {
    fn new(rows: usize, cols: usize, spacing: f64, occupied: impl Fn(usize, usize) -> bool) -> Self {
        let mut index = vec![None; rows * cols];
        let mut nodes = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if occupied(r, c) {
                    index[r * cols + c] = Some(nodes.len());
                    nodes.push(Vector3::new(c as f64 * spacing, r as f64 * spacing, 0.0));
                }
            }
        }
        GridBuilder { rows, cols, index, nodes, spacing }
    }

    fn at(&self, r: usize, c: usize) -> Option<usize> {
        if r < self.rows && c < self.cols {
            self.index[r * self.cols + c]
        } else {
            None
        }
    }

    /// Emits structural + shear springs, skipping any pair rejected by `keep`.
    fn springs(&self, stiffness: f64, keep: impl Fn((usize, usize), (usize, usize)) -> bool) -> Vec<Spring> {
        let mut springs = Vec::new();
        let mut push = |ia: usize, ib: usize, len: f64| {
            springs.push(Spring { a: ia, b: ib, rest_length: len, stiffness });
        };
        let diag = self.spacing * std::f64::consts::SQRT_2;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let Some(i) = self.at(r, c) else { continue };
                if let Some(j) = self.at(r, c + 1) {
                    if keep((r, c), (r, c + 1)) {
                        push(i, j, self.spacing);
                    }
                }
                if let Some(j) = self.at(r + 1, c) {
                    if keep((r, c), (r + 1, c)) {
                        push(i, j, self.spacing);
                    }
                }
                // Shear pair only when the whole quad exists.
                let quad = [self.at(r, c), self.at(r, c + 1), self.at(r + 1, c), self.at(r + 1, c + 1)];
                if let [Some(i00), Some(i01), Some(i10), Some(i11)] = quad {
                    if keep((r, c), (r + 1, c + 1)) {
                        push(i00, i11, diag);
                    }
                    if keep((r, c + 1), (r + 1, c)) {
                        push(i01, i10, diag);
                    }
                }
            }
        }
        springs
    }
}

/// Builds one of the stock sheet meshes. Rest lengths equal the initial
/// geometric distances, so the freshly built mesh is at equilibrium.
pub fn build_mesh(spec: &MeshSpec) -> Result<Mesh> {
    spec.validate()?;
    let n = spec.resolution;
    let mesh = match spec.shape {
        SheetShape::SlitSheet => {
            // Vertical cut between columns `cut` and `cut + 1`, spanning the
            // central rows. Springs crossing the cut line are omitted; the
            // node set stays complete.
            let cut = (n - 1) / 2;
            let r_lo = n / 4;
            let r_hi = n - 1 - n / 4;
            let grid = GridBuilder::new(n, n, spec.spacing, |_, _| true);
            let crosses = |a: (usize, usize), b: (usize, usize)| {
                let (lo, hi) = if a.1 <= b.1 { (a, b) } else { (b, a) };
                lo.1 <= cut && hi.1 > cut && a.0 >= r_lo && a.0 <= r_hi && b.0 >= r_lo && b.0 <= r_hi
            };
            let springs = grid.springs(spec.stiffness, |a, b| !crosses(a, b));
            Mesh::new(grid.nodes, springs)?
        }
        SheetShape::SquareHoleSheet => {
            let h = spec.hole_size();
            if h + 2 > n {
                return Err(Error::Config(format!(
                    "hole size {h} leaves no border on a {n}x{n} sheet"
                )));
            }
            let start = (n - h) / 2;
            let in_hole = move |r: usize, c: usize| {
                r >= start && r < start + h && c >= start && c < start + h
            };
            let grid = GridBuilder::new(n, n, spec.spacing, |r, c| !in_hole(r, c));
            let springs = grid.springs(spec.stiffness, |_, _| true);
            Mesh::new(grid.nodes, springs)?
        }
        SheetShape::LSheet => {
            let t = spec.leg_thickness();
            if t < 2 || t >= n {
                return Err(Error::Config(format!(
                    "leg thickness {t} invalid for an L-sheet of resolution {n}"
                )));
            }
            let grid = GridBuilder::new(n, n, spec.spacing, |r, c| c < t || r < t);
            let springs = grid.springs(spec.stiffness, |_, _| true);
            Mesh::new(grid.nodes, springs)?
        }
    };
    debug_assert!(mesh.is_connected());
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: SheetShape, resolution: usize) -> MeshSpec {
        MeshSpec {
            shape,
            resolution,
            spacing: 0.02,
            stiffness: 40.0,
            hole_size: None,
            leg_thickness: None,
        }
    }

    #[test]
    fn slit_sheet_keeps_all_nodes_and_grid_rest_lengths() {
        let mesh = build_mesh(&spec(SheetShape::SlitSheet, 5)).unwrap();
        assert_eq!(mesh.node_count(), 25);
        let s = 0.02;
        let diag = s * std::f64::consts::SQRT_2;
        for spring in &mesh.springs {
            let is_structural = (spring.rest_length - s).abs() < 1e-12;
            let is_shear = (spring.rest_length - diag).abs() < 1e-12;
            assert!(is_structural || is_shear, "rest length {}", spring.rest_length);
        }
        // Fewer springs than the intact sheet: the cut removed some.
        let full = GridBuilder::new(5, 5, s, |_, _| true).springs(40.0, |_, _| true);
        assert!(mesh.springs.len() < full.len());
        assert!(mesh.is_connected());
    }

    #[test]
    fn slit_crossing_springs_are_absent() {
        let mesh = build_mesh(&spec(SheetShape::SlitSheet, 5)).unwrap();
        // Node (r, c) has index r*5 + c; the cut sits between columns 2 and 3
        // for rows 1..=3, so the middle horizontal spring must be gone.
        let crossing = (2 * 5 + 2, 2 * 5 + 3);
        assert!(!mesh
            .springs
            .iter()
            .any(|s| (s.a, s.b) == crossing || (s.b, s.a) == crossing));
        // Outside the slit span the sheet is intact.
        let intact = (0, 1);
        assert!(mesh.springs.iter().any(|s| (s.a, s.b) == intact || (s.b, s.a) == intact));
    }

    #[test]
    fn square_hole_node_count_matches_inclusion_exclusion() {
        let mut sp = spec(SheetShape::SquareHoleSheet, 7);
        sp.hole_size = Some(3);
        let mesh = build_mesh(&sp).unwrap();
        assert_eq!(mesh.node_count(), 49 - 9);
        assert!(mesh.is_connected());
    }

    #[test]
    fn l_sheet_node_count_matches_inclusion_exclusion() {
        let mut sp = spec(SheetShape::LSheet, 5);
        sp.leg_thickness = Some(3);
        let mesh = build_mesh(&sp).unwrap();
        // 5x3 + 3x5 - 3x3
        assert_eq!(mesh.node_count(), 21);
        assert!(mesh.is_connected());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build_mesh(&spec(SheetShape::SlitSheet, 0)).is_err());
        assert!(build_mesh(&spec(SheetShape::SlitSheet, 2)).is_err());
        let mut bad = spec(SheetShape::SlitSheet, 5);
        bad.spacing = 0.0;
        assert!(build_mesh(&bad).is_err());
        let mut bad = spec(SheetShape::SquareHoleSheet, 5);
        bad.hole_size = Some(4);
        assert!(build_mesh(&bad).is_err());
    }

    #[test]
    fn mesh_validation_catches_duplicates_and_ranges() {
        let nodes = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        let dup = vec![
            Spring { a: 0, b: 1, rest_length: 1.0, stiffness: 1.0 },
            Spring { a: 1, b: 0, rest_length: 1.0, stiffness: 1.0 },
        ];
        assert!(Mesh::new(nodes.clone(), dup).is_err());
        let out = vec![Spring { a: 0, b: 2, rest_length: 1.0, stiffness: 1.0 }];
        assert!(Mesh::new(nodes.clone(), out).is_err());
        let bad_len = vec![Spring { a: 0, b: 1, rest_length: 0.0, stiffness: 1.0 }];
        assert!(Mesh::new(nodes, bad_len).is_err());
    }
}
