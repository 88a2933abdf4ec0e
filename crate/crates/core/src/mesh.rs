//! Structured meshes: uniform intervals on (0,1), bilinear quads on the unit
//! square and on the L-shaped domain (0,1)² \ [0.5,1]×[0,0.5].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Absolute tolerance used when classifying boundary nodes by coordinate.
pub const BOUNDARY_TOL: f64 = 1e-12;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Interval,
    Square,
    Lshape,
}

impl DomainKind {
    pub fn dim(self) -> usize {
        match self {
            DomainKind::Interval => 1,
            DomainKind::Square | DomainKind::Lshape => 2,
        }
    }

    pub fn measure(self) -> f64 {
        match self {
            DomainKind::Interval | DomainKind::Square => 1.0,
            DomainKind::Lshape => 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
    Reentrant,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 5] = [
        BoundaryTag::Left,
        BoundaryTag::Right,
        BoundaryTag::Bottom,
        BoundaryTag::Top,
        BoundaryTag::Reentrant,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// How the element size entering τ is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HDefinition {
    /// Largest vertex-to-vertex distance.
    #[default]
    Diameter,
    /// Shortest edge.
    Edge,
}

impl std::str::FromStr for HDefinition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diameter" => Ok(HDefinition::Diameter),
            "edge" => Ok(HDefinition::Edge),
            other => Err(Error::InvalidArgument(format!(
                "h-definition must be 'diameter' or 'edge', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    kind: DomainKind,
    divisions: usize,
    nodes: Vec<Point>,
    nodes_per_cell: usize,
    connectivity: Vec<usize>,
    boundary: Vec<u8>,
    h_definition: HDefinition,
    h: Vec<f64>,
}

impl Mesh {
    fn finish(
        kind: DomainKind,
        divisions: usize,
        nodes: Vec<Point>,
        nodes_per_cell: usize,
        connectivity: Vec<usize>,
    ) -> Result<Mesh> {
        let boundary = nodes.iter().map(|p| classify(kind, *p)).collect();
        let mut mesh = Mesh {
            kind,
            divisions,
            nodes,
            nodes_per_cell,
            connectivity,
            boundary,
            h_definition: HDefinition::Diameter,
            h: Vec::new(),
        };
        mesh.h = (0..mesh.num_elements())
            .map(|e| element_diameter(&mesh, e))
            .collect::<Result<_>>()?;
        Ok(mesh)
    }

    /// Returns a copy whose per-element size follows `definition`.
    pub fn with_h_definition(mut self, definition: HDefinition) -> Result<Mesh> {
        self.h_definition = definition;
        self.h = (0..self.num_elements())
            .map(|e| element_size(&self, e, definition))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Number of divisions per unit edge used to build the mesh.
    pub fn divisions(&self) -> usize {
        self.divisions
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.connectivity.len() / self.nodes_per_cell
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.nodes_per_cell
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let n = self.nodes_per_cell;
        &self.connectivity[e * n..(e + 1) * n]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks_exact(self.nodes_per_cell)
    }

    pub fn h(&self, e: usize) -> f64 {
        self.h[e]
    }

    pub fn h_per_element(&self) -> &[f64] {
        &self.h
    }

    pub fn h_definition(&self) -> HDefinition {
        self.h_definition
    }

    pub fn h_max(&self) -> f64 {
        self.h.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node] != 0
    }

    pub fn has_tag(&self, node: usize, tag: BoundaryTag) -> bool {
        self.boundary[node] & tag.bit() != 0
    }

    pub fn tags(&self, node: usize) -> impl Iterator<Item = BoundaryTag> + '_ {
        BoundaryTag::ALL
            .into_iter()
            .filter(move |t| self.has_tag(node, *t))
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(|&i| self.is_boundary(i))
    }

    /// Length (1D) or area (2D) of element `e`.
    pub fn element_measure(&self, e: usize) -> f64 {
        let v = self.element(e);
        match self.dim() {
            1 => self.nodes[v[1]][0] - self.nodes[v[0]][0],
            _ => {
                // shoelace
                let mut a = 0.0;
                for i in 0..v.len() {
                    let p = self.nodes[v[i]];
                    let q = self.nodes[v[(i + 1) % v.len()]];
                    a += p[0] * q[1] - q[0] * p[1];
                }
                0.5 * a
            }
        }
    }
}

fn classify(kind: DomainKind, p: Point) -> u8 {
    let on = |a: f64, b: f64| (a - b).abs() <= BOUNDARY_TOL;
    let [x, y] = p;
    let mut bits = 0;
    match kind {
        DomainKind::Interval => {
            if on(x, 0.0) {
                bits |= BoundaryTag::Left.bit();
            }
            if on(x, 1.0) {
                bits |= BoundaryTag::Right.bit();
            }
        }
        DomainKind::Square => {
            if on(x, 0.0) {
                bits |= BoundaryTag::Left.bit();
            }
            if on(x, 1.0) {
                bits |= BoundaryTag::Right.bit();
            }
            if on(y, 0.0) {
                bits |= BoundaryTag::Bottom.bit();
            }
            if on(y, 1.0) {
                bits |= BoundaryTag::Top.bit();
            }
        }
        DomainKind::Lshape => {
            if on(x, 0.0) {
                bits |= BoundaryTag::Left.bit();
            }
            if on(x, 1.0) {
                bits |= BoundaryTag::Right.bit();
            }
            if on(y, 0.0) {
                bits |= BoundaryTag::Bottom.bit();
            }
            if on(y, 1.0) {
                bits |= BoundaryTag::Top.bit();
            }
            let vertical_cut = on(x, 0.5) && y <= 0.5 + BOUNDARY_TOL;
            let horizontal_cut = on(y, 0.5) && x >= 0.5 - BOUNDARY_TOL;
            if vertical_cut || horizontal_cut {
                bits |= BoundaryTag::Reentrant.bit();
            }
        }
    }
    bits
}

pub fn build_interval_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "interval mesh needs n >= 2, got {n}"
        )));
    }
    let nodes = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
    let connectivity = (0..n).flat_map(|e| [e, e + 1]).collect();
    Mesh::finish(DomainKind::Interval, n, nodes, 2, connectivity)
}

pub fn build_square_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "square mesh needs n >= 2, got {n}"
        )));
    }
    build_grid(DomainKind::Square, n, |_, _| true)
}

pub fn build_lshape_mesh(n: usize) -> Result<Mesh> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "L-shape mesh needs an even n >= 4 so the cut at 0.5 lies on mesh lines, got {n}"
        )));
    }
    let half = n / 2;
    // cell (i, j) has lower-left corner (i/n, j/n)
    build_grid(DomainKind::Lshape, n, move |i, j| !(i >= half && j < half))
}

/// Row-major grid of quads, keeping the cells accepted by `keep` and compacting
/// away nodes that no kept cell references.
fn build_grid(kind: DomainKind, n: usize, keep: impl Fn(usize, usize) -> bool) -> Result<Mesh> {
    let full = |i: usize, j: usize| j * (n + 1) + i;
    let mut used = vec![false; (n + 1) * (n + 1)];
    let mut cells = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if keep(i, j) {
                let quad = [full(i, j), full(i + 1, j), full(i + 1, j + 1), full(i, j + 1)];
                for v in quad {
                    used[v] = true;
                }
                cells.push(quad);
            }
        }
    }
    let mut index = vec![usize::MAX; used.len()];
    let mut nodes = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let g = full(i, j);
            if used[g] {
                index[g] = nodes.len();
                nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
    }
    let connectivity = cells.iter().flat_map(|q| q.map(|v| index[v])).collect();
    Mesh::finish(kind, n, nodes, 4, connectivity)
}

pub fn build_mesh(kind: DomainKind, n: usize) -> Result<Mesh> {
    match kind {
        DomainKind::Interval => build_interval_mesh(n),
        DomainKind::Square => build_square_mesh(n),
        DomainKind::Lshape => build_lshape_mesh(n),
    }
}

/// Diameter of element `e`: its length in 1D, the largest vertex distance in 2D.
pub fn element_diameter(mesh: &Mesh, e: usize) -> Result<f64> {
    element_size(mesh, e, HDefinition::Diameter)
}

fn element_size(mesh: &Mesh, e: usize, definition: HDefinition) -> Result<f64> {
    let v = mesh.element(e);
    let dist = |a: usize, b: usize| {
        let p = mesh.nodes[v[a]];
        let q = mesh.nodes[v[b]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let size = match (mesh.dim(), definition) {
        (1, _) => dist(0, 1),
        (_, HDefinition::Diameter) => {
            let mut d: f64 = 0.0;
            for a in 0..v.len() {
                for b in a + 1..v.len() {
                    d = d.max(dist(a, b));
                }
            }
            d
        }
        (_, HDefinition::Edge) => (0..v.len())
            .map(|a| dist(a, (a + 1) % v.len()))
            .fold(f64::INFINITY, f64::min),
    };
    if !(size > BOUNDARY_TOL) || mesh.element_measure(e) <= 0.0 {
        return Err(Error::InvalidGeometry {
            element: e,
            reason: format!("degenerate element (size {size:e})"),
        });
    }
    Ok(size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_n4() {
        let m = build_interval_mesh(4).unwrap();
        let xs: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.num_elements(), 4);
        assert!(m.h_per_element().iter().all(|&h| h == 0.25));
        assert_eq!(m.boundary_nodes().collect::<Vec<_>>(), vec![0, 4]);
    }

    #[test]
    fn interval_n2_connectivity() {
        let m = build_interval_mesh(2).unwrap();
        assert_eq!(m.element(0), &[0, 1]);
        assert_eq!(m.element(1), &[1, 2]);
    }

    #[test]
    fn interval_n1000() {
        let m = build_interval_mesh(1000).unwrap();
        let mut count = 0;
        for _ in 0..1000 {
            count += 1;
        }
        assert_eq!(m.num_elements(), count);
        assert!((m.h(17) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn rejects_small_n() {
        assert!(matches!(build_interval_mesh(1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_square_mesh(1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_lshape_mesh(5), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_lshape_mesh(2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn square_counts() {
        let m = build_square_mesh(2).unwrap();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.num_elements(), 4);
        let m = build_square_mesh(20).unwrap();
        assert_eq!(m.num_elements(), 400);
    }

    #[test]
    fn square_diameter_is_diagonal() {
        let m = build_square_mesh(10).unwrap();
        for &h in m.h_per_element() {
            assert!((h - 0.1 * 2f64.sqrt()).abs() < 1e-14);
        }
        let m = m.with_h_definition(HDefinition::Edge).unwrap();
        assert!((m.h(0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lshape_counts_and_diameter() {
        let m = build_lshape_mesh(4).unwrap();
        assert_eq!(m.num_elements(), 12);
        assert_eq!(m.num_nodes(), 25 - 4);
        for &h in m.h_per_element() {
            assert!((h - 2f64.sqrt() / 4.0).abs() < 1e-15);
        }
        let m = build_lshape_mesh(64).unwrap();
        assert_eq!(m.num_elements(), 3072);
    }

    #[test]
    fn measures_sum_to_domain() {
        for m in [
            build_interval_mesh(7).unwrap(),
            build_square_mesh(9).unwrap(),
            build_lshape_mesh(10).unwrap(),
        ] {
            let total: f64 = (0..m.num_elements()).map(|e| m.element_measure(e)).sum();
            assert!((total - m.kind().measure()).abs() < 1e-12);
            assert!((0..m.num_elements()).all(|e| m.element_measure(e) > 0.0));
        }
    }

    #[test]
    fn boundary_nodes_on_boundary() {
        let m = build_lshape_mesh(8).unwrap();
        for i in m.boundary_nodes() {
            let [x, y] = m.nodes()[i];
            let on = |v: f64| [0.0, 0.5, 1.0].iter().any(|c| (v - c).abs() <= 1e-12);
            assert!(on(x) || on(y));
        }
        // reentrant corner
        let corner = m
            .nodes()
            .iter()
            .position(|p| p[0] == 0.5 && p[1] == 0.5)
            .unwrap();
        assert!(m.has_tag(corner, BoundaryTag::Reentrant));
        // node count on boundary: perimeter of the L is 4 units, n=8 → 32 nodes
        assert_eq!(m.boundary_nodes().count(), 32);
    }

    #[test]
    fn interior_nodes_shared_by_four() {
        let m = build_square_mesh(6).unwrap();
        let mut count = vec![0; m.num_nodes()];
        for cell in m.elements() {
            for &v in cell {
                count[v] += 1;
            }
        }
        for i in 0..m.num_nodes() {
            if !m.is_boundary(i) {
                assert_eq!(count[i], 4);
            }
        }
    }

    #[test]
    fn counter_clockwise() {
        let m = build_lshape_mesh(6).unwrap();
        for e in 0..m.num_elements() {
            assert!(m.element_measure(e) > 0.0);
        }
    }

    #[test]
    fn deterministic() {
        let a = build_lshape_mesh(12).unwrap();
        let b = build_lshape_mesh(12).unwrap();
        assert_eq!(a.nodes(), b.nodes());
        assert_eq!(a.connectivity, b.connectivity);
    }
}
