//! Sub-grid scales and the goal-oriented estimators.
//!
//! With R u_h = f − ℒu_h, R* z_h = q − ℒ*z_h and P⊥ = I − P_h:
//!
//! * explicit:  η1^K = ⟨q, τ P⊥(R u_h)⟩_K
//! * implicit:  η2^K = ⟨τ P⊥(R* z_h), R u_h⟩_K + ⟨ℒ* z_h, τ P⊥(R u_h)⟩_K
//!
//! P_h is the global L² projection onto the discrete space that holds the
//! projection unknown ξ_h. By default that space is the finite element space with
//! homogeneous values on the Dirichlet nodes, the discrete test space. Both sums
//! agree globally when τ is uniform; element by element they differ.
//!
//! On degree-one elements the Laplacian of the discrete fields vanishes inside
//! each element, so ℒu_h = a·∇u_h + s u_h and ℒ*z_h = −a·∇z_h + s z_h.

use serde::Serialize;

use crate::assembly::ProblemKind;
use crate::error::{Error, Result};
use crate::fe::{map_to_physical, ElementValues, ReferenceElement};
use crate::mesh::Mesh;
use crate::problem::{tau_per_element, ProblemSpec, QoiSpec, StabilizationConstants};

/// Nodal values of u_h (or z_h) and of the residual projection ξ_h (or ξ_{h,d}).
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub kind: ProblemKind,
    pub values: Vec<f64>,
    pub projection: Option<Vec<f64>>,
}

impl SolutionField {
    pub fn new(kind: ProblemKind, values: Vec<f64>, projection: Option<Vec<f64>>) -> Self {
        SolutionField {
            kind,
            values,
            projection,
        }
    }

    fn check(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.num_nodes() {
            return Err(Error::MeshMismatch(format!(
                "{} nodal values for a mesh with {} nodes",
                self.values.len(),
                mesh.num_nodes()
            )));
        }
        if let Some(p) = &self.projection {
            if p.len() != mesh.num_nodes() {
                return Err(Error::MeshMismatch(format!(
                    "{} projection values for a mesh with {} nodes",
                    p.len(),
                    mesh.num_nodes()
                )));
            }
        }
        Ok(())
    }

    fn projection(&self) -> Result<&[f64]> {
        self.projection.as_deref().ok_or(Error::MissingProjection)
    }

    fn local(values: &[f64], mesh: &Mesh, e: usize) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (slot, &v) in out.iter_mut().zip(mesh.element(e)) {
            *slot = values[v];
        }
        out
    }
}

/// Modeled sub-grid scale τ P⊥(R) at the quadrature points of each element.
#[derive(Debug, Clone)]
pub struct SubscaleField {
    pub per_element: Vec<Vec<f64>>,
}

/// Residual, its orthogonal part and the operator term at one element's points.
struct PointData {
    residual: Vec<f64>,
    orthogonal: Vec<f64>,
    /// ℒu_h (primal) or ℒ*z_h (dual)
    operator: Vec<f64>,
}

fn point_data(
    solution: &SolutionField,
    problem: &ProblemSpec,
    mesh: &Mesh,
    e: usize,
    ev: &ElementValues,
    need_projection: bool,
) -> Result<PointData> {
    let c = &problem.coefficients;
    let sigma = match solution.kind {
        ProblemKind::Primal => 1.0,
        ProblemKind::Dual => -1.0,
    };
    let local = SolutionField::local(&solution.values, mesh, e);
    let local_xi = if need_projection {
        Some(SolutionField::local(solution.projection()?, mesh, e))
    } else {
        None
    };
    let nq = ev.num_points();
    let mut out = PointData {
        residual: Vec::with_capacity(nq),
        orthogonal: Vec::with_capacity(nq),
        operator: Vec::with_capacity(nq),
    };
    for q in 0..nq {
        let x = ev.points[q];
        let a = (c.advection)(x);
        let g = ev.gradient(q, &local);
        let u = ev.value(q, &local);
        let op = sigma * (a[0] * g[0] + a[1] * g[1]) + c.s * u;
        let source = match solution.kind {
            ProblemKind::Primal => (c.forcing)(x),
            ProblemKind::Dual => (problem.qoi.q)(x),
        };
        let r = source - op;
        out.operator.push(op);
        out.residual.push(r);
        if let Some(xi) = &local_xi {
            out.orthogonal.push(r - ev.value(q, xi));
        }
    }
    Ok(out)
}

fn element_values(mesh: &Mesh, e: usize, reference: &ReferenceElement) -> Result<ElementValues> {
    if e >= mesh.num_elements() {
        return Err(Error::MeshMismatch(format!("element {e} out of range")));
    }
    map_to_physical(mesh, e, reference)
}

/// R u_h = f − ℒu_h (primal) or R* z_h = q − ℒ*z_h (dual) at the quadrature points of `e`.
pub fn residual_at_qp(
    solution: &SolutionField,
    problem: &ProblemSpec,
    mesh: &Mesh,
    e: usize,
    reference: &ReferenceElement,
) -> Result<Vec<f64>> {
    solution.check(mesh)?;
    let ev = element_values(mesh, e, reference)?;
    Ok(point_data(solution, problem, mesh, e, &ev, false)?.residual)
}

/// P⊥(R) = R − ξ_h at the quadrature points of `e`.
pub fn orthogonal_residual_at_qp(
    solution: &SolutionField,
    problem: &ProblemSpec,
    mesh: &Mesh,
    e: usize,
    reference: &ReferenceElement,
) -> Result<Vec<f64>> {
    solution.check(mesh)?;
    let ev = element_values(mesh, e, reference)?;
    Ok(point_data(solution, problem, mesh, e, &ev, true)?.orthogonal)
}

/// Q(u_h) = Σ_K ∫_K q u_h.
pub fn qoi_value(
    solution: &SolutionField,
    qoi: &QoiSpec,
    mesh: &Mesh,
    reference: &ReferenceElement,
) -> Result<f64> {
    solution.check(mesh)?;
    let mut total = 0.0;
    for e in 0..mesh.num_elements() {
        let ev = map_to_physical(mesh, e, reference)?;
        let local = SolutionField::local(&solution.values, mesh, e);
        for q in 0..ev.num_points() {
            total += ev.jxw[q] * (qoi.q)(ev.points[q]) * ev.value(q, &local);
        }
    }
    Ok(total)
}

/// Per-element contributions and their ordered sum.
#[derive(Debug, Clone, Serialize)]
pub struct LocalEstimate {
    pub per_element: Vec<f64>,
    pub total: f64,
}

impl LocalEstimate {
    fn from_elements(per_element: Vec<f64>) -> Self {
        let total = per_element.iter().sum();
        LocalEstimate { per_element, total }
    }
}

/// Everything the estimators need about the discretization, τ included.
#[derive(Debug, Clone)]
pub struct EstimationContext<'a> {
    pub mesh: &'a Mesh,
    pub problem: &'a ProblemSpec,
    pub reference: ReferenceElement,
    pub tau: Vec<f64>,
}

impl<'a> EstimationContext<'a> {
    pub fn new(
        mesh: &'a Mesh,
        problem: &'a ProblemSpec,
        constants: &StabilizationConstants,
        points_per_direction: usize,
    ) -> Result<Self> {
        let reference = ReferenceElement::new(mesh.dim(), points_per_direction)?;
        let tau = tau_per_element(mesh, problem, constants, &reference)?;
        Ok(EstimationContext {
            mesh,
            problem,
            reference,
            tau,
        })
    }

    fn expect(&self, solution: &SolutionField, kind: ProblemKind) -> Result<()> {
        solution.check(self.mesh)?;
        if solution.kind != kind {
            return Err(Error::InvalidArgument(format!(
                "expected a {kind:?} solution, got {:?}",
                solution.kind
            )));
        }
        solution.projection()?;
        Ok(())
    }

    /// τ P⊥(R) per element and point.
    pub fn subscales(&self, solution: &SolutionField) -> Result<SubscaleField> {
        solution.check(self.mesh)?;
        let mut per_element = Vec::with_capacity(self.mesh.num_elements());
        for e in 0..self.mesh.num_elements() {
            let ev = map_to_physical(self.mesh, e, &self.reference)?;
            let d = point_data(solution, self.problem, self.mesh, e, &ev, true)?;
            per_element.push(d.orthogonal.iter().map(|r| self.tau[e] * r).collect());
        }
        Ok(SubscaleField { per_element })
    }

    /// η1^K = ⟨q, τ P⊥(R u_h)⟩_K
    pub fn eta1(&self, primal: &SolutionField) -> Result<LocalEstimate> {
        self.expect(primal, ProblemKind::Primal)?;
        let q = &self.problem.qoi.q;
        let mut per_element = Vec::with_capacity(self.mesh.num_elements());
        for e in 0..self.mesh.num_elements() {
            let ev = map_to_physical(self.mesh, e, &self.reference)?;
            let d = point_data(primal, self.problem, self.mesh, e, &ev, true)?;
            let mut acc = 0.0;
            for (qp, ortho) in d.orthogonal.iter().enumerate() {
                acc += ev.jxw[qp] * q(ev.points[qp]) * self.tau[e] * ortho;
            }
            per_element.push(acc);
        }
        Ok(LocalEstimate::from_elements(per_element))
    }

    /// η2^K = ⟨τ P⊥(R* z_h), R u_h⟩_K + ⟨ℒ* z_h, τ P⊥(R u_h)⟩_K
    pub fn eta2(&self, primal: &SolutionField, dual: &SolutionField) -> Result<LocalEstimate> {
        self.expect(primal, ProblemKind::Primal)?;
        self.expect(dual, ProblemKind::Dual)?;
        let mut per_element = Vec::with_capacity(self.mesh.num_elements());
        for e in 0..self.mesh.num_elements() {
            let ev = map_to_physical(self.mesh, e, &self.reference)?;
            let p = point_data(primal, self.problem, self.mesh, e, &ev, true)?;
            let d = point_data(dual, self.problem, self.mesh, e, &ev, true)?;
            let tau = self.tau[e];
            let mut acc = 0.0;
            for qp in 0..ev.num_points() {
                let dual_subscale = tau * d.orthogonal[qp];
                let primal_subscale = tau * p.orthogonal[qp];
                acc += ev.jxw[qp] * (dual_subscale * p.residual[qp] + d.operator[qp] * primal_subscale);
            }
            per_element.push(acc);
        }
        Ok(LocalEstimate::from_elements(per_element))
    }
}

/// Free-function form of [`EstimationContext::eta1`].
pub fn eta1(
    primal: &SolutionField,
    problem: &ProblemSpec,
    mesh: &Mesh,
    constants: &StabilizationConstants,
    points_per_direction: usize,
) -> Result<LocalEstimate> {
    EstimationContext::new(mesh, problem, constants, points_per_direction)?.eta1(primal)
}

/// Free-function form of [`EstimationContext::eta2`].
pub fn eta2(
    primal: &SolutionField,
    dual: &SolutionField,
    problem: &ProblemSpec,
    mesh: &Mesh,
    constants: &StabilizationConstants,
    points_per_direction: usize,
) -> Result<LocalEstimate> {
    EstimationContext::new(mesh, problem, constants, points_per_direction)?.eta2(primal, dual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Effectivity {
    /// |Q(u) − Q(u_h)| / |η|; infinite when η = 0 and the error is not.
    pub value: f64,
    /// η = 0 while the error is nonzero.
    pub degenerate: bool,
    /// sign(η) = sign(Q(u) − Q(u_h))
    pub sign_agrees: bool,
}

pub fn effectivity(reference_q: f64, qoi_uh: f64, eta: f64) -> Effectivity {
    let error = reference_q - qoi_uh;
    let (value, degenerate) = if eta != 0.0 {
        (error.abs() / eta.abs(), false)
    } else if error == 0.0 {
        (1.0, false)
    } else {
        (f64::INFINITY, true)
    };
    Effectivity {
        value,
        degenerate,
        sign_agrees: error == 0.0 || eta == 0.0 || error.signum() == eta.signum(),
    }
}

/// Estimates and effectivities on one mesh.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorReport {
    pub example: String,
    pub n: usize,
    pub h: f64,
    pub dofs: usize,
    pub q_uh: f64,
    pub q_ref: f64,
    pub eta1: LocalEstimate,
    pub eta2: LocalEstimate,
    pub ieff1: Effectivity,
    pub ieff2: Effectivity,
}

impl EstimatorReport {
    pub fn error(&self) -> f64 {
        self.q_ref - self.q_uh
    }

    /// max_K |η1^K − η2^K|
    pub fn max_local_difference(&self) -> f64 {
        self.eta1
            .per_element
            .iter()
            .zip(&self.eta2.per_element)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// |η1 − η2| / max(|η1|, 1e-30)
    pub fn global_mismatch(&self) -> f64 {
        (self.eta1.total - self.eta2.total).abs() / self.eta1.total.abs().max(1e-30)
    }
}
