//! Assembly of the coupled OSGS system
//!
//! ```text
//! [ K  -Pτ ] [ u ]   [ Fτ ]
//! [ D   M  ] [ ξ ] = [ F  ]
//! ```
//!
//! for the primal problem and its adjoint twin. Row block 1 is the stabilized
//! equation tested with free nodes; row block 2 is the L² projection of the
//! residual onto the projection space (free nodes by default, every node with
//! [`ProjectionSpace::Full`]). Dirichlet values are eliminated from the u columns
//! and moved to the right-hand sides.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::{build_dofmap, map_to_physical, DofMap, ReferenceElement};
use crate::mesh::Mesh;
use crate::problem::{tau_per_element, ProblemSpec, ProjectionSpace, StabilizationConstants};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Primal,
    Dual,
}

impl ProblemKind {
    /// Sign of the advective term in the operator applied to the unknown.
    fn advection_sign(self) -> f64 {
        match self {
            ProblemKind::Primal => 1.0,
            ProblemKind::Dual => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub kind: ProblemKind,
    pub dofmap: DofMap,
    /// Unknowns of ξ; its constrained nodes hold zero.
    pub projection_dofs: DofMap,
    /// n_free × n_free
    pub k: CsrMatrix,
    /// n_free × n_xi, enters the first block row with a minus sign
    pub p_tau: CsrMatrix,
    /// n_xi × n_free
    pub d: CsrMatrix,
    /// n_xi × n_xi consistent Gram matrix
    pub m: CsrMatrix,
    pub f_tau: Vec<f64>,
    pub f: Vec<f64>,
    /// τ per element, as used in the stabilization terms
    pub tau: Vec<f64>,
}

impl BlockSystem {
    pub fn n_u(&self) -> usize {
        self.dofmap.n_free()
    }

    pub fn n_xi(&self) -> usize {
        self.projection_dofs.n_free()
    }

    /// The full 2×2 operator and right-hand side, unknowns ordered (u_free, ξ).
    pub fn monolithic(&self) -> Result<(CsrMatrix, Vec<f64>)> {
        let minus_p = self.p_tau.scaled(-1.0);
        let a = CsrMatrix::from_blocks(&[
            vec![Some(&self.k), Some(&minus_p)],
            vec![Some(&self.d), Some(&self.m)],
        ])?;
        let mut rhs = self.f_tau.clone();
        rhs.extend_from_slice(&self.f);
        Ok((a, rhs))
    }

    /// Splits a monolithic solution into nodal u (Dirichlet values filled in) and nodal ξ.
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (u, xi) = x.split_at(self.n_u());
        (self.dofmap.expand(u), self.projection_dofs.expand(xi))
    }
}

/// Node-to-node adjacency: for every node, the sorted nodes sharing an element with it.
fn node_graph(mesh: &Mesh) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); mesh.num_nodes()];
    for cell in mesh.elements() {
        for &a in cell {
            adj[a].extend_from_slice(cell);
        }
    }
    for row in &mut adj {
        row.sort_unstable();
        row.dedup();
    }
    adj
}

fn pattern(
    graph: &[Vec<usize>],
    row_map: impl Fn(usize) -> Option<usize>,
    col_map: impl Fn(usize) -> Option<usize>,
    nrows: usize,
    ncols: usize,
) -> CsrMatrix {
    let mut rows = vec![Vec::new(); nrows];
    for (node, nbrs) in graph.iter().enumerate() {
        if let Some(r) = row_map(node) {
            let mut cols: Vec<usize> = nbrs.iter().filter_map(|&c| col_map(c)).collect();
            cols.sort_unstable();
            rows[r] = cols;
        }
    }
    CsrMatrix::from_pattern(nrows, ncols, rows)
}

const MAX_NODES: usize = 4;
type Local = [[f64; MAX_NODES]; MAX_NODES];

/// Element matrices, indexed [test][trial].
#[derive(Debug, Clone, Default)]
struct ElementBlocks {
    k: Local,
    p: Local,
    d: Local,
    m: Local,
    f_tau: [f64; MAX_NODES],
    f: [f64; MAX_NODES],
}

fn element_blocks(
    mesh: &Mesh,
    e: usize,
    problem: &ProblemSpec,
    reference: &ReferenceElement,
    tau: f64,
    kind: ProblemKind,
) -> Result<ElementBlocks> {
    let ev = map_to_physical(mesh, e, reference)?;
    let c = &problem.coefficients;
    let sigma = kind.advection_sign();
    let nn = ev.num_nodes;
    let mut out = ElementBlocks::default();
    for q in 0..ev.num_points() {
        let x = ev.points[q];
        let w = ev.jxw[q];
        let a = (c.advection)(x);
        let source = match kind {
            ProblemKind::Primal => (c.forcing)(x),
            ProblemKind::Dual => (problem.qoi.q)(x),
        };
        let n = ev.n(q);
        let dn = ev.dn(q);
        let mut a_grad = [0.0; MAX_NODES];
        for i in 0..nn {
            a_grad[i] = a[0] * dn[i][0] + a[1] * dn[i][1];
        }
        for i in 0..nn {
            // operator adjoint to the one acting on the unknown, applied to the test function
            let test_op = -sigma * a_grad[i] + c.s * n[i];
            for j in 0..nn {
                let trial_op = sigma * a_grad[j] + c.s * n[j];
                let diffusion = c.k * (dn[j][0] * dn[i][0] + dn[j][1] * dn[i][1]);
                let galerkin = diffusion + sigma * a_grad[j] * n[i] + c.s * n[j] * n[i];
                out.k[i][j] += w * (galerkin - tau * trial_op * test_op);
                out.p[i][j] += w * tau * n[j] * test_op;
                out.d[i][j] += w * trial_op * n[i];
                out.m[i][j] += w * n[j] * n[i];
            }
            out.f_tau[i] += w * (source * n[i] - tau * source * test_op);
            out.f[i] += w * source * n[i];
        }
    }
    Ok(out)
}

const CHUNK: usize = 4096;

fn assemble(
    mesh: &Mesh,
    problem: &ProblemSpec,
    constants: &StabilizationConstants,
    points_per_direction: usize,
    kind: ProblemKind,
) -> Result<BlockSystem> {
    problem.validate()?;
    problem.check_mesh(mesh)?;
    let reference = ReferenceElement::new(mesh.dim(), points_per_direction)?;
    let tau = tau_per_element(mesh, problem, constants, &reference)?;
    let primal_map = build_dofmap(mesh, &problem.dirichlet)?;
    let dofmap = match kind {
        ProblemKind::Primal => primal_map,
        ProblemKind::Dual => primal_map.homogeneous(),
    };
    let projection_dofs = match problem.projection {
        ProjectionSpace::Constrained => dofmap.homogeneous(),
        ProjectionSpace::Full => DofMap::from_constraints(&vec![None; mesh.num_nodes()]),
    };
    let n_xi = projection_dofs.n_free();
    let n_free = dofmap.n_free();
    let graph = node_graph(mesh);
    let eq = |v: usize| dofmap.equation(v);
    let xq = |v: usize| projection_dofs.equation(v);
    let mut k = pattern(&graph, eq, eq, n_free, n_free);
    let mut p_tau = pattern(&graph, eq, xq, n_free, n_xi);
    let mut d = pattern(&graph, xq, eq, n_xi, n_free);
    let mut m = pattern(&graph, xq, xq, n_xi, n_xi);
    let mut f_tau = vec![0.0; n_free];
    let mut f = vec![0.0; n_xi];

    let n_el = mesh.num_elements();
    for start in (0..n_el).step_by(CHUNK) {
        let end = (start + CHUNK).min(n_el);
        let locals: Vec<ElementBlocks> = (start..end)
            .into_par_iter()
            .map(|e| element_blocks(mesh, e, problem, &reference, tau[e], kind))
            .collect::<Result<_>>()?;
        // sequential scatter in element order keeps the sums deterministic
        for (e, loc) in (start..end).zip(&locals) {
            let cell = mesh.element(e);
            for (i, &vi) in cell.iter().enumerate() {
                let row = dofmap.equation(vi);
                let xrow = projection_dofs.equation(vi);
                for (j, &vj) in cell.iter().enumerate() {
                    let col = dofmap.equation(vj);
                    let xcol = projection_dofs.equation(vj);
                    let g = dofmap.dirichlet_value(vj);
                    if let Some(xi) = xrow {
                        if let Some(xj) = xcol {
                            m.add_to(xi, xj, loc.m[i][j]);
                        }
                        match col {
                            Some(cj) => d.add_to(xi, cj, loc.d[i][j]),
                            None => f[xi] -= loc.d[i][j] * g,
                        }
                    }
                    if let Some(ri) = row {
                        if let Some(xj) = xcol {
                            p_tau.add_to(ri, xj, loc.p[i][j]);
                        }
                        match col {
                            Some(cj) => k.add_to(ri, cj, loc.k[i][j]),
                            None => f_tau[ri] -= loc.k[i][j] * g,
                        }
                    }
                }
                if let Some(xi) = xrow {
                    f[xi] += loc.f[i];
                }
                if let Some(ri) = row {
                    f_tau[ri] += loc.f_tau[i];
                }
            }
        }
    }
    Ok(BlockSystem {
        kind,
        dofmap,
        projection_dofs,
        k,
        p_tau,
        d,
        m,
        f_tau,
        f,
        tau,
    })
}

/// Primal OSGS system: B(u,v) − Σ τ⟨ℒu, ℒ*v⟩ − Σ τ⟨ξ, ℒ*v⟩ = L(v) − Σ τ⟨f, ℒ*v⟩,
/// ⟨ℒu, ζ⟩ + ⟨ξ, ζ⟩ = ⟨f, ζ⟩.
pub fn assemble_primal(
    mesh: &Mesh,
    problem: &ProblemSpec,
    constants: &StabilizationConstants,
    points_per_direction: usize,
) -> Result<BlockSystem> {
    assemble(mesh, problem, constants, points_per_direction, ProblemKind::Primal)
}

/// Adjoint OSGS system: advection reversed, forcing q, z = 0 wherever u is prescribed.
pub fn assemble_dual(
    mesh: &Mesh,
    problem: &ProblemSpec,
    constants: &StabilizationConstants,
    points_per_direction: usize,
) -> Result<BlockSystem> {
    assemble(mesh, problem, constants, points_per_direction, ProblemKind::Dual)
}

/// Single-field system after eliminating ξ with the row-sum lumped Gram matrix.
#[derive(Debug, Clone)]
pub struct CondensedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub lumped_mass: Vec<f64>,
}

impl CondensedSystem {
    /// Nodal ξ = M_L⁻¹ (F − D u) from the free-dof solution `u_free`.
    pub fn recover_projection(&self, system: &BlockSystem, u_free: &[f64]) -> Vec<f64> {
        let du = system.d.matvec(u_free);
        let xi: Vec<f64> = system
            .f
            .iter()
            .zip(&du)
            .zip(&self.lumped_mass)
            .map(|((f, d), m)| (f - d) / m)
            .collect();
        system.projection_dofs.expand(&xi)
    }
}

/// (K + Pτ M_L⁻¹ D) u = Fτ + Pτ M_L⁻¹ F
pub fn condense_lumped(system: &BlockSystem) -> Result<CondensedSystem> {
    let lumped = system.m.row_sums();
    if let Some(node) = lumped.iter().position(|&v| !(v.abs() > 0.0)) {
        return Err(Error::SingularMass { node });
    }
    let inv: Vec<f64> = lumped.iter().map(|v| 1.0 / v).collect();
    let p_minv = system.p_tau.matmul(&CsrMatrix::from_diagonal(&inv))?;
    let matrix = system.k.add(&p_minv.matmul(&system.d)?)?;
    let correction = p_minv.matvec(&system.f);
    let rhs = system
        .f_tau
        .iter()
        .zip(&correction)
        .map(|(a, b)| a + b)
        .collect();
    Ok(CondensedSystem {
        matrix,
        rhs,
        lumped_mass: lumped,
    })
}
