#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use osgs_goal::assembly::{assemble_dual, assemble_primal, BlockSystem, ProblemKind};
use osgs_goal::estimators::{orthogonal_residual_at_qp, residual_at_qp};
use osgs_goal::fe::{map_to_physical, ReferenceElement};
use osgs_goal::harness::{solve_field, Settings};
use osgs_goal::mesh::{build_mesh, BoundaryTag, Mesh};
use osgs_goal::problem::{
    builtin_example, CoefficientField, DirichletData, ProblemSpec, Reference, StabilizationConstants, VelocityScale,
};
use osgs_goal::sparse::CsrMatrix;

/// Gauss-Legendre points and weights on [-1, 1], written out by hand.
pub fn gauss(n: usize) -> Vec<(f64, f64)> {
    match n {
        1 => vec![(0.0, 2.0)],
        2 => {
            let p = 1.0 / 3f64.sqrt();
            vec![(-p, 1.0), (p, 1.0)]
        }
        3 => {
            let p = (0.6f64).sqrt();
            vec![(-p, 5.0 / 9.0), (0.0, 8.0 / 9.0), (p, 5.0 / 9.0)]
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            vec![(-b, wb), (-a, wa), (a, wa), (b, wb)]
        }
        _ => panic!("oracle rule not tabulated for {n} points"),
    }
}

/// Full-node matrices (no Dirichlet treatment), indexed [test][trial].
pub struct Oracle {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub f_tau: DVector<f64>,
    pub f: DVector<f64>,
    pub tau: Vec<f64>,
}

struct Box2 {
    x0: f64,
    y0: f64,
    hx: f64,
    hy: f64,
}

fn cell_box(mesh: &Mesh, e: usize) -> Box2 {
    let pts: Vec<[f64; 2]> = mesh.element(e).iter().map(|&v| mesh.nodes()[v]).collect();
    let xs = pts.iter().map(|p| p[0]);
    let ys = pts.iter().map(|p| p[1]);
    let x0 = xs.clone().fold(f64::INFINITY, f64::min);
    let x1 = xs.fold(f64::NEG_INFINITY, f64::max);
    let y0 = ys.clone().fold(f64::INFINITY, f64::min);
    let y1 = ys.fold(f64::NEG_INFINITY, f64::max);
    Box2 {
        x0,
        y0,
        hx: x1 - x0,
        hy: y1 - y0,
    }
}

/// Tent function of node `xa` on the cell and its derivative at `x`.
fn hat(x: f64, xa: f64, h: f64) -> (f64, f64) {
    let r = (x - xa) / h;
    (1.0 - r.abs(), -r.signum() / h)
}

/// Physical quadrature points of element `e`: (point, weight·|J|).
fn points(mesh: &Mesh, e: usize, ppd: usize) -> Vec<([f64; 2], f64)> {
    let b = cell_box(mesh, e);
    let g = gauss(ppd);
    let mut out = Vec::new();
    if mesh.dim() == 1 {
        for &(t, w) in &g {
            out.push(([b.x0 + 0.5 * b.hx * (1.0 + t), 0.0], 0.5 * b.hx * w));
        }
    } else {
        for &(ty, wy) in &g {
            for &(tx, wx) in &g {
                let x = b.x0 + 0.5 * b.hx * (1.0 + tx);
                let y = b.y0 + 0.5 * b.hy * (1.0 + ty);
                out.push(([x, y], 0.25 * b.hx * b.hy * wx * wy));
            }
        }
    }
    out
}

/// Values and gradients of the element's nodal functions at `p`.
fn basis(mesh: &Mesh, e: usize, p: [f64; 2]) -> Vec<(f64, [f64; 2])> {
    let b = cell_box(mesh, e);
    mesh.element(e)
        .iter()
        .map(|&v| {
            let c = mesh.nodes()[v];
            let (nx, dx) = hat(p[0], c[0], b.hx);
            if mesh.dim() == 1 {
                (nx, [dx, 0.0])
            } else {
                let (ny, dy) = hat(p[1], c[1], b.hy);
                (nx * ny, [dx * ny, nx * dy])
            }
        })
        .collect()
}

fn oracle_tau(mesh: &Mesh, problem: &ProblemSpec, c: &StabilizationConstants, ppd: usize) -> Vec<f64> {
    let a = &problem.coefficients.advection;
    let speed = |p: [f64; 2]| {
        let v = a(p);
        (v[0] * v[0] + v[1] * v[1]).sqrt()
    };
    let elem_max: Vec<f64> = (0..mesh.num_elements())
        .map(|e| points(mesh, e, ppd).iter().map(|(p, _)| speed(*p)).fold(0.0, f64::max))
        .collect();
    let global = elem_max.iter().cloned().fold(0.0, f64::max);
    (0..mesh.num_elements())
        .map(|e| {
            let b = cell_box(mesh, e);
            let h = (b.hx * b.hx + b.hy * b.hy).sqrt();
            let an = match problem.velocity_scale {
                VelocityScale::Element => elem_max[e],
                VelocityScale::Domain => global,
            };
            let k = problem.coefficients.k;
            let s = problem.coefficients.s;
            1.0 / (c.c1 * k / (h * h) + c.c2 * an / h + c.c3 * s)
        })
        .collect()
}

/// Straightforward dense assembly of every block over all nodes.
pub fn dense_oracle(mesh: &Mesh, problem: &ProblemSpec, ppd: usize, kind: ProblemKind) -> Oracle {
    let c = StabilizationConstants::default();
    let n = mesh.num_nodes();
    let tau = oracle_tau(mesh, problem, &c, ppd);
    let mut o = Oracle {
        k: DMatrix::zeros(n, n),
        p: DMatrix::zeros(n, n),
        d: DMatrix::zeros(n, n),
        m: DMatrix::zeros(n, n),
        f_tau: DVector::zeros(n),
        f: DVector::zeros(n),
        tau: tau.clone(),
    };
    let co = &problem.coefficients;
    let sign = if kind == ProblemKind::Primal { 1.0 } else { -1.0 };
    for e in 0..mesh.num_elements() {
        let cell = mesh.element(e);
        let t = tau[e];
        for (x, w) in points(mesh, e, ppd) {
            let a = (co.advection)(x);
            let src = if kind == ProblemKind::Primal { (co.forcing)(x) } else { (problem.qoi.q)(x) };
            let bs = basis(mesh, e, x);
            for (i, &vi) in cell.iter().enumerate() {
                let (ni, gi) = bs[i];
                let adv_i = a[0] * gi[0] + a[1] * gi[1];
                // operator adjoint to the one applied to the unknown
                let lstar_i = -sign * adv_i + co.s * ni;
                for (j, &vj) in cell.iter().enumerate() {
                    let (nj, gj) = bs[j];
                    let adv_j = a[0] * gj[0] + a[1] * gj[1];
                    let l_j = sign * adv_j + co.s * nj;
                    let b = co.k * (gi[0] * gj[0] + gi[1] * gj[1]) + sign * adv_j * ni + co.s * nj * ni;
                    o.k[(vi, vj)] += w * (b - t * l_j * lstar_i);
                    o.p[(vi, vj)] += w * t * nj * lstar_i;
                    o.d[(vi, vj)] += w * l_j * ni;
                    o.m[(vi, vj)] += w * nj * ni;
                }
                o.f_tau[vi] += w * (src * ni - t * src * lstar_i);
                o.f[vi] += w * src * ni;
            }
        }
    }
    o
}

pub fn dense(a: &CsrMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplets() {
        m[(i, j)] += v;
    }
    m
}

/// Rows/columns of the oracle restricted to the system's unknowns, with Dirichlet
/// values moved to the right-hand sides. Returns (K, P, D, M, Fτ, F).
pub fn restrict(
    o: &Oracle,
    sys: &BlockSystem,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let n = sys.dofmap.n_nodes();
    let free: Vec<usize> = (0..n).filter(|&v| sys.dofmap.is_free(v)).collect();
    let xi: Vec<usize> = (0..n).filter(|&v| sys.projection_dofs.is_free(v)).collect();
    let g = DVector::from_iterator(n, (0..n).map(|v| if sys.dofmap.is_free(v) { 0.0 } else { sys.dofmap.dirichlet_value(v) }));
    let pick = |m: &DMatrix<f64>, r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| m[(r[i], c[j])]);
    let kg = &o.k * &g;
    let dg = &o.d * &g;
    (
        pick(&o.k, &free, &free),
        pick(&o.p, &free, &xi),
        pick(&o.d, &xi, &free),
        pick(&o.m, &xi, &xi),
        DVector::from_iterator(free.len(), free.iter().map(|&v| o.f_tau[v] - kg[v])),
        DVector::from_iterator(xi.len(), xi.iter().map(|&v| o.f[v] - dg[v])),
    )
}

/// K + P M⁻¹ D: the stabilized operator with ξ eliminated through the consistent Gram matrix.
pub fn condensed_consistent(sys: &BlockSystem) -> DMatrix<f64> {
    let m_inv = dense(&sys.m).try_inverse().expect("Gram matrix is invertible");
    dense(&sys.k) + dense(&sys.p_tau) * m_inv * dense(&sys.d)
}

pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    a.clone()
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// max |a − b| / max(|a|, |b|, tiny)
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = max_abs(a).max(max_abs(b)).max(1e-300);
    max_abs(&(a - b)) / scale
}

pub fn vec_rel_diff(a: &DVector<f64>, b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(1e-300, |m: f64, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs())) / scale
}

/// Every example on a small mesh with the domain it needs.
pub fn small_cases() -> Vec<(&'static str, usize)> {
    vec![("ex1", 10), ("ex2", 6), ("ex3", 8), ("ex4", 6)]
}

fn l2_norm_on(mesh: &Mesh, reference: &ReferenceElement, values: impl Fn(usize) -> Vec<f64>) -> f64 {
    let mut acc = 0.0;
    for e in 0..mesh.num_elements() {
        let ev = map_to_physical(mesh, e, reference).unwrap();
        for (q, v) in values(e).iter().enumerate() {
            acc += ev.jxw[q] * v * v;
        }
    }
    acc.sqrt()
}

/// Σ_K ⟨P⊥(R), N_i⟩_K for each free node, scaled by ‖R‖ ‖N_i‖.
pub fn worst_moment(id: &str, n: usize, kind: ProblemKind) -> f64 {
    let p = builtin_example(id).unwrap();
    let mesh = build_mesh(p.domain, n).unwrap();
    let (field, _, sys) = solve_field(&mesh, &p, &Settings::default(), kind).unwrap();
    let reference = ReferenceElement::new(mesh.dim(), p.quadrature).unwrap();
    let r_norm = l2_norm_on(&mesh, &reference, |e| residual_at_qp(&field, &p, &mesh, e, &reference).unwrap());
    let mut moments = vec![0.0; mesh.num_nodes()];
    let mut basis_sq = vec![0.0; mesh.num_nodes()];
    for e in 0..mesh.num_elements() {
        let ev = map_to_physical(&mesh, e, &reference).unwrap();
        let ortho = orthogonal_residual_at_qp(&field, &p, &mesh, e, &reference).unwrap();
        for (a, &v) in mesh.element(e).iter().enumerate() {
            for q in 0..ev.num_points() {
                let ni = ev.n(q)[a];
                moments[v] += ev.jxw[q] * ortho[q] * ni;
                basis_sq[v] += ev.jxw[q] * ni * ni;
            }
        }
    }
    (0..mesh.num_nodes())
        .filter(|&v| sys.projection_dofs.is_free(v))
        .map(|v| moments[v].abs() / (r_norm * basis_sq[v].sqrt()))
        .fold(0.0, f64::max)
}

/// u = x y (in the Q1 space) solves −kΔu + a·∇u + s u = y + x + s x y.
pub fn bilinear_exact_problem() -> ProblemSpec {
    let mut p = builtin_example("ex3").unwrap();
    let s = 0.5;
    p.coefficients = CoefficientField {
        k: 0.01,
        s,
        advection: Arc::new(|_| [1.0, 1.0]),
        forcing: Arc::new(move |x| x[1] + x[0] + s * x[0] * x[1]),
    };
    let g: osgs_goal::problem::ScalarFn = Arc::new(|x| x[0] * x[1]);
    let mut bc = DirichletData::full();
    for tag in [BoundaryTag::Left, BoundaryTag::Right, BoundaryTag::Bottom, BoundaryTag::Top] {
        bc = bc.with_fn(tag, g.clone());
    }
    p.dirichlet = bc;
    p.reference = Reference::Analytic { solution: g };
    p
}

/// Largest relative difference between the assembled blocks and the dense oracle.
pub fn oracle_mismatch(id: &str, n: usize, kind: ProblemKind) -> f64 {
    let p = builtin_example(id).unwrap();
    let mesh = build_mesh(p.domain, n).unwrap();
    let c = StabilizationConstants::default();
    let sys = match kind {
        ProblemKind::Primal => assemble_primal(&mesh, &p, &c, p.quadrature).unwrap(),
        ProblemKind::Dual => assemble_dual(&mesh, &p, &c, p.quadrature).unwrap(),
    };
    let o = dense_oracle(&mesh, &p, p.quadrature, kind);
    let (k, pt, d, m, f_tau, f) = restrict(&o, &sys);
    let tau = sys
        .tau
        .iter()
        .zip(&o.tau)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs() / b));
    [
        tau,
        rel_diff(&dense(&sys.k), &k),
        rel_diff(&dense(&sys.p_tau), &pt),
        rel_diff(&dense(&sys.d), &d),
        rel_diff(&dense(&sys.m), &m),
        vec_rel_diff(&f_tau, &sys.f_tau),
        if f.iter().chain(&sys.f).any(|v| *v != 0.0) { vec_rel_diff(&f, &sys.f) } else { 0.0 },
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Relative mismatch between the condensed dual operator and the transposed primal one.
pub fn transpose_mismatch(id: &str, n: usize) -> f64 {
    let p = builtin_example(id).unwrap();
    let mesh = build_mesh(p.domain, n).unwrap();
    let c = StabilizationConstants::default();
    let primal = assemble_primal(&mesh, &p, &c, p.quadrature).unwrap();
    let dual = assemble_dual(&mesh, &p, &c, p.quadrature).unwrap();
    rel_diff(&condensed_consistent(&primal).transpose(), &condensed_consistent(&dual))
}
