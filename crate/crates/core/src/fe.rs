//! Degree-one Lagrange elements (P1 intervals, Q1 quadrilaterals): Gauss rules,
//! tabulated shape functions, the isoparametric map and the dof numbering.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::problem::DirichletData;

/// Tensor-product Gauss-Legendre rule on [-1,1]^dim.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn gauss_legendre_1d(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (p, w): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let s = (6.0f64 / 5.0).sqrt();
            let a = ((3.0 - 2.0 * s) / 7.0).sqrt();
            let b = ((3.0 + 2.0 * s) / 7.0).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let s = 2.0 * (10.0f64 / 7.0).sqrt();
            let a = (5.0 - s).sqrt() / 3.0;
            let b = (5.0 + s).sqrt() / 3.0;
            let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
            (
                vec![-b, -a, 0.0, a, b],
                vec![wb, wa, 128.0 / 225.0, wa, wb],
            )
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "quadrature points per direction must be in 1..=5, got {n}"
            )))
        }
    };
    Ok((p, w))
}

/// Gauss-Legendre rule with `points_per_direction` points along each axis.
pub fn quadrature_rule(points_per_direction: usize, dim: usize) -> Result<QuadratureRule> {
    let (p, w) = gauss_legendre_1d(points_per_direction)?;
    let (points, weights) = match dim {
        1 => (p.iter().map(|&x| [x, 0.0]).collect(), w),
        2 => {
            let mut points = Vec::with_capacity(p.len() * p.len());
            let mut weights = Vec::with_capacity(p.len() * p.len());
            for j in 0..p.len() {
                for i in 0..p.len() {
                    points.push([p[i], p[j]]);
                    weights.push(w[i] * w[j]);
                }
            }
            (points, weights)
        }
        _ => return Err(Error::InvalidArgument(format!("unsupported dimension {dim}"))),
    };
    Ok(QuadratureRule {
        dim,
        points,
        weights,
    })
}

const QUAD_CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Shape function values and reference gradients at a reference point.
pub fn shape_functions(dim: usize, xi: Point) -> (Vec<f64>, Vec<[f64; 2]>) {
    match dim {
        1 => (
            vec![0.5 * (1.0 - xi[0]), 0.5 * (1.0 + xi[0])],
            vec![[-0.5, 0.0], [0.5, 0.0]],
        ),
        _ => {
            let values = QUAD_CORNERS
                .iter()
                .map(|c| 0.25 * (1.0 + c[0] * xi[0]) * (1.0 + c[1] * xi[1]))
                .collect();
            let grads = QUAD_CORNERS
                .iter()
                .map(|c| {
                    [
                        0.25 * c[0] * (1.0 + c[1] * xi[1]),
                        0.25 * c[1] * (1.0 + c[0] * xi[0]),
                    ]
                })
                .collect();
            (values, grads)
        }
    }
}

/// Shape data tabulated at the points of a quadrature rule.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub dim: usize,
    pub num_nodes: usize,
    pub rule: QuadratureRule,
    /// `shape[q * num_nodes + a]`
    pub shape: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
}

impl ReferenceElement {
    pub fn new(dim: usize, points_per_direction: usize) -> Result<Self> {
        let rule = quadrature_rule(points_per_direction, dim)?;
        let num_nodes = if dim == 1 { 2 } else { 4 };
        let mut shape = Vec::with_capacity(rule.len() * num_nodes);
        let mut grad = Vec::with_capacity(rule.len() * num_nodes);
        for &xi in &rule.points {
            let (n, g) = shape_functions(dim, xi);
            shape.extend(n);
            grad.extend(g);
        }
        Ok(ReferenceElement {
            dim,
            num_nodes,
            rule,
            shape,
            grad,
        })
    }

    pub fn num_points(&self) -> usize {
        self.rule.len()
    }
}

/// Physical-space data for one element at each quadrature point.
#[derive(Debug, Clone)]
pub struct ElementValues {
    pub num_nodes: usize,
    pub points: Vec<Point>,
    pub det_j: Vec<f64>,
    /// quadrature weight × det J
    pub jxw: Vec<f64>,
    pub shape: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
}

impl ElementValues {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn n(&self, q: usize) -> &[f64] {
        &self.shape[q * self.num_nodes..(q + 1) * self.num_nodes]
    }

    pub fn dn(&self, q: usize) -> &[[f64; 2]] {
        &self.grad[q * self.num_nodes..(q + 1) * self.num_nodes]
    }

    /// Interpolates nodal values (indexed like the element's local nodes).
    pub fn value(&self, q: usize, local: &[f64]) -> f64 {
        self.n(q).iter().zip(local).map(|(n, u)| n * u).sum()
    }

    pub fn gradient(&self, q: usize, local: &[f64]) -> [f64; 2] {
        self.dn(q).iter().zip(local).fold([0.0, 0.0], |acc, (g, u)| {
            [acc[0] + g[0] * u, acc[1] + g[1] * u]
        })
    }
}

/// Maps the reference data of `reference` onto element `e` of `mesh`.
pub fn map_to_physical(mesh: &Mesh, e: usize, reference: &ReferenceElement) -> Result<ElementValues> {
    let cell = mesh.element(e);
    let nn = reference.num_nodes;
    if cell.len() != nn || mesh.dim() != reference.dim {
        return Err(Error::DimensionMismatch(format!(
            "element {e} has {} nodes in {}D, reference element has {nn} in {}D",
            cell.len(),
            mesh.dim(),
            reference.dim
        )));
    }
    let coords: Vec<Point> = cell.iter().map(|&v| mesh.nodes()[v]).collect();
    let nq = reference.num_points();
    let mut values = ElementValues {
        num_nodes: nn,
        points: Vec::with_capacity(nq),
        det_j: Vec::with_capacity(nq),
        jxw: Vec::with_capacity(nq),
        shape: reference.shape.clone(),
        grad: Vec::with_capacity(nq * nn),
    };
    for q in 0..nq {
        let n = &reference.shape[q * nn..(q + 1) * nn];
        let dn = &reference.grad[q * nn..(q + 1) * nn];
        let mut x = [0.0; 2];
        for a in 0..nn {
            x[0] += n[a] * coords[a][0];
            x[1] += n[a] * coords[a][1];
        }
        let det = if reference.dim == 1 {
            let j: f64 = (0..nn).map(|a| dn[a][0] * coords[a][0]).sum();
            if j <= 0.0 {
                return Err(Error::InvertedElement { element: e, det: j });
            }
            for d in dn {
                values.grad.push([d[0] / j, 0.0]);
            }
            j
        } else {
            // J[r][c] = d x_r / d xi_c
            let mut jac = [[0.0; 2]; 2];
            for a in 0..nn {
                for r in 0..2 {
                    for c in 0..2 {
                        jac[r][c] += coords[a][r] * dn[a][c];
                    }
                }
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det <= 0.0 {
                return Err(Error::InvertedElement { element: e, det });
            }
            // grad N = J^{-T} grad_ref N
            let inv = [
                [jac[1][1] / det, -jac[0][1] / det],
                [-jac[1][0] / det, jac[0][0] / det],
            ];
            for d in dn {
                values.grad.push([
                    inv[0][0] * d[0] + inv[1][0] * d[1],
                    inv[0][1] * d[0] + inv[1][1] * d[1],
                ]);
            }
            det
        };
        values.points.push(x);
        values.det_j.push(det);
        values.jxw.push(det * reference.rule.weights[q]);
    }
    Ok(values)
}

/// Equation numbering: free nodes get a contiguous index, constrained nodes carry
/// their prescribed value.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    equation: Vec<Option<usize>>,
    values: Vec<f64>,
    n_free: usize,
}

impl DofMap {
    pub fn from_constraints(constraints: &[Option<f64>]) -> DofMap {
        let mut equation = Vec::with_capacity(constraints.len());
        let mut values = Vec::with_capacity(constraints.len());
        let mut n_free = 0;
        for c in constraints {
            match c {
                Some(v) => {
                    equation.push(None);
                    values.push(*v);
                }
                None => {
                    equation.push(Some(n_free));
                    values.push(0.0);
                    n_free += 1;
                }
            }
        }
        DofMap {
            equation,
            values,
            n_free,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.equation.len()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_dirichlet(&self) -> usize {
        self.n_nodes() - self.n_free
    }

    pub fn equation(&self, node: usize) -> Option<usize> {
        self.equation[node]
    }

    pub fn is_free(&self, node: usize) -> bool {
        self.equation[node].is_some()
    }

    /// Prescribed value of a constrained node (zero for free nodes).
    pub fn dirichlet_value(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Same constrained set with every prescribed value set to zero.
    pub fn homogeneous(&self) -> DofMap {
        DofMap {
            equation: self.equation.clone(),
            values: vec![0.0; self.values.len()],
            n_free: self.n_free,
        }
    }

    /// Scatters free-dof values into a nodal vector, filling constrained nodes.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.equation
            .iter()
            .zip(&self.values)
            .map(|(eq, v)| eq.map_or(*v, |i| free[i]))
            .collect()
    }

    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (node, eq) in self.equation.iter().enumerate() {
            if let Some(i) = eq {
                out[*i] = nodal[node];
            }
        }
        out
    }
}

/// Applies `dirichlet` to the boundary nodes of `mesh`.
pub fn build_dofmap(mesh: &Mesh, dirichlet: &DirichletData) -> Result<DofMap> {
    let mut constraints = vec![None; mesh.num_nodes()];
    for node in mesh.boundary_nodes() {
        let p = mesh.nodes()[node];
        let value = mesh.tags(node).find_map(|t| dirichlet.value(t, p));
        match value {
            Some(v) => constraints[node] = Some(v),
            None if dirichlet.is_full() => {
                return Err(Error::Config(format!(
                    "boundary node {node} at ({}, {}) has no Dirichlet value",
                    p[0], p[1]
                )))
            }
            None => {}
        }
    }
    Ok(DofMap::from_constraints(&constraints))
}
