//! Problem definitions: coefficients, boundary data, quantity of interest and
//! the stabilization parameter τ.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fe::{map_to_physical, quadrature_rule, ReferenceElement};
use crate::mesh::{BoundaryTag, DomainKind, Mesh, Point};

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

pub fn constant(v: f64) -> ScalarFn {
    Arc::new(move |_| v)
}

#[derive(Clone)]
pub struct CoefficientField {
    pub k: f64,
    pub s: f64,
    pub advection: VectorFn,
    pub forcing: ScalarFn,
}

impl CoefficientField {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::InvalidArgument(format!("diffusion k must be > 0, got {}", self.k)));
        }
        if !(self.s >= 0.0) {
            return Err(Error::InvalidArgument(format!("reaction s must be >= 0, got {}", self.s)));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct QoiSpec {
    pub q: ScalarFn,
    pub description: String,
}

/// Dirichlet values per boundary tag. A `full` condition requires every boundary
/// node to be prescribed; otherwise unprescribed sides carry the natural condition.
#[derive(Clone, Default)]
pub struct DirichletData {
    sides: BTreeMap<BoundaryTag, ScalarFn>,
    full: bool,
}

impl DirichletData {
    pub fn full() -> Self {
        DirichletData {
            sides: BTreeMap::new(),
            full: true,
        }
    }

    pub fn partial() -> Self {
        DirichletData {
            sides: BTreeMap::new(),
            full: false,
        }
    }

    /// u = 0 on every side.
    pub fn homogeneous() -> Self {
        BoundaryTag::ALL
            .into_iter()
            .fold(Self::full(), |d, t| d.with_constant(t, 0.0))
    }

    pub fn with_constant(self, tag: BoundaryTag, value: f64) -> Self {
        self.with_fn(tag, constant(value))
    }

    pub fn with_fn(mut self, tag: BoundaryTag, g: ScalarFn) -> Self {
        self.sides.insert(tag, g);
        self
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn value(&self, tag: BoundaryTag, p: Point) -> Option<f64> {
        self.sides.get(&tag).map(|g| g(p))
    }

    pub fn prescribed_sides(&self) -> impl Iterator<Item = BoundaryTag> + '_ {
        self.sides.keys().copied()
    }
}

/// Where the reference value of Q(u) comes from.
#[derive(Clone)]
pub enum Reference {
    Analytic { solution: ScalarFn },
    FineMesh { n: usize },
}

/// How the characteristic velocity |a| in τ is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityScale {
    /// max |a| over the element's quadrature points
    #[default]
    Element,
    /// max |a| over all quadrature points of the mesh (uniform τ on uniform meshes)
    Domain,
}

impl std::str::FromStr for VelocityScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "element" => Ok(VelocityScale::Element),
            "domain" => Ok(VelocityScale::Domain),
            other => Err(Error::InvalidArgument(format!(
                "velocity scale must be 'element' or 'domain', got '{other}'"
            ))),
        }
    }
}

/// Space the residual is projected onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionSpace {
    /// The discrete test space: ξ vanishes wherever u is prescribed.
    #[default]
    Constrained,
    /// Every node, including Dirichlet nodes.
    Full,
}

impl std::str::FromStr for ProjectionSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(ProjectionSpace::Constrained),
            "full" => Ok(ProjectionSpace::Full),
            other => Err(Error::InvalidArgument(format!(
                "projection space must be 'constrained' or 'full', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizationConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for StabilizationConstants {
    fn default() -> Self {
        StabilizationConstants {
            c1: 4.0,
            c2: 2.0,
            c3: 1.0,
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub id: String,
    pub domain: DomainKind,
    pub coefficients: CoefficientField,
    pub dirichlet: DirichletData,
    pub qoi: QoiSpec,
    pub reference: Reference,
    /// Gauss points per direction for every element integral of this problem.
    pub quadrature: usize,
    pub velocity_scale: VelocityScale,
    pub projection: ProjectionSpace,
    /// Mesh sizes must be multiples of this (aligns q's discontinuities with mesh lines).
    pub mesh_multiple: usize,
    /// Published value of Q(u), when there is one.
    pub published_qoi: Option<f64>,
    pub default_sizes: Vec<usize>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("id", &self.id)
            .field("domain", &self.domain)
            .field("k", &self.coefficients.k)
            .field("s", &self.coefficients.s)
            .field("qoi", &self.qoi.description)
            .field("quadrature", &self.quadrature)
            .finish()
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.coefficients.validate()?;
        if self.mesh_multiple == 0 {
            return Err(Error::InvalidArgument("mesh multiple must be positive".into()));
        }
        quadrature_rule(self.quadrature, self.domain.dim())?;
        Ok(())
    }

    /// Checks that `mesh` is compatible with this problem.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if mesh.kind() != self.domain {
            return Err(Error::DimensionMismatch(format!(
                "problem {} is posed on {:?}, mesh is {:?}",
                self.id,
                self.domain,
                mesh.kind()
            )));
        }
        if mesh.divisions() % self.mesh_multiple != 0 {
            return Err(Error::InvalidArgument(format!(
                "problem {} needs n divisible by {}, got {}",
                self.id,
                self.mesh_multiple,
                mesh.divisions()
            )));
        }
        Ok(())
    }

    pub fn analytic_solution(&self) -> Option<&ScalarFn> {
        match &self.reference {
            Reference::Analytic { solution } => Some(solution),
            Reference::FineMesh { .. } => None,
        }
    }

    pub fn with_velocity_scale(mut self, scale: VelocityScale) -> Self {
        self.velocity_scale = scale;
        self
    }

    pub fn with_qoi(mut self, qoi: QoiSpec) -> Self {
        self.qoi = qoi;
        self
    }
}

pub const EXAMPLE_IDS: [&str; 4] = ["ex1", "ex2", "ex3", "ex4"];

pub fn builtin_example(id: &str) -> Result<ProblemSpec> {
    match id {
        "ex1" => Ok(example_1d_layer()),
        "ex2" => Ok(example_parabolic_flow()),
        "ex3" => Ok(example_boundary_layer()),
        "ex4" => Ok(example_lshape()),
        other => Err(Error::UnknownExample(other.to_string())),
    }
}

/// One-line summary used by `list-examples`.
pub fn example_summary(id: &str) -> Option<&'static str> {
    Some(match id {
        "ex1" => "1D, k=1, a=1000, s=0.1, f=0, u(0)=1, u(1)=0, q=1",
        "ex2" => "unit square, k=0.05, a=(20y(1-y),0), s=0, f=0, u=0 at x=0, u=1 at x=1, q=cos(pi x/5)",
        "ex3" => "unit square, k=0.01, a=(1,1), s=1e-4, manufactured layers at x=1,y=1, q=1 on (0.75,1)^2",
        "ex4" => "L-shape, k=0.001, a=(1,1), s=0, f=1, u=0 on the boundary, q=1",
        _ => return None,
    })
}

/// Solution of -k u'' + a u' + s u = 0 on (0,1) with u(0)=u0, u(1)=u1, written
/// as A e^{r₋ x} + B e^{r₊ (x-1)} so that both exponentials stay bounded.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialLayer1d {
    r_minus: f64,
    r_plus: f64,
    a: f64,
    b: f64,
}

impl ExponentialLayer1d {
    pub fn new(k: f64, adv: f64, s: f64, u0: f64, u1: f64) -> Self {
        let disc = (adv * adv + 4.0 * k * s).sqrt();
        let r_plus = (adv + disc) / (2.0 * k);
        // cancellation-free form of (adv - disc) / 2k
        let r_minus = -2.0 * s / (adv + disc);
        let e_minus = r_minus.exp();
        let e_plus = (-r_plus).exp();
        // [1, e₊; e₋, 1] [A; B] = [u0; u1]
        let det = 1.0 - e_plus * e_minus;
        let a = (u0 - e_plus * u1) / det;
        let b = (u1 - e_minus * u0) / det;
        ExponentialLayer1d {
            r_minus,
            r_plus,
            a,
            b,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.a * (self.r_minus * x).exp() + self.b * (self.r_plus * (x - 1.0)).exp()
    }

    /// ∫₀¹ u dx in closed form.
    pub fn integral(&self) -> f64 {
        let first = if self.r_minus == 0.0 {
            1.0
        } else {
            (self.r_minus.exp() - 1.0) / self.r_minus
        };
        self.a * first + self.b * (1.0 - (-self.r_plus).exp()) / self.r_plus
    }
}

fn example_1d_layer() -> ProblemSpec {
    let (k, adv, s) = (1.0, 1000.0, 0.1);
    let layer = ExponentialLayer1d::new(k, adv, s, 1.0, 0.0);
    ProblemSpec {
        id: "ex1".into(),
        domain: DomainKind::Interval,
        coefficients: CoefficientField {
            k,
            s,
            advection: Arc::new(move |_| [adv, 0.0]),
            forcing: constant(0.0),
        },
        dirichlet: DirichletData::full()
            .with_constant(BoundaryTag::Left, 1.0)
            .with_constant(BoundaryTag::Right, 0.0),
        qoi: QoiSpec {
            q: constant(1.0),
            description: "q = 1 on (0,1)".into(),
        },
        reference: Reference::Analytic {
            solution: Arc::new(move |p| layer.value(p[0])),
        },
        quadrature: 2,
        velocity_scale: VelocityScale::Element,
        projection: ProjectionSpace::Constrained,
        mesh_multiple: 1,
        published_qoi: Some(0.9990),
        default_sizes: vec![20, 40, 80, 160, 320, 640],
    }
}

/// The closed form printed for the 1D example, (1 - e^{-1000(1-x)}) / (1 - e^{-1000}).
/// It solves the s = 0 equation; with s = 0.1 it differs from the true solution by O(s/a).
pub fn ex1_printed_solution(x: f64) -> f64 {
    (1.0 - (-1000.0 * (1.0 - x)).exp()) / (1.0 - (-1000.0f64).exp())
}

fn example_parabolic_flow() -> ProblemSpec {
    ProblemSpec {
        id: "ex2".into(),
        domain: DomainKind::Square,
        coefficients: CoefficientField {
            k: 0.05,
            s: 0.0,
            advection: Arc::new(|p| [20.0 * p[1] * (1.0 - p[1]), 0.0]),
            forcing: constant(0.0),
        },
        dirichlet: DirichletData::partial()
            .with_constant(BoundaryTag::Left, 0.0)
            .with_constant(BoundaryTag::Right, 1.0),
        qoi: QoiSpec {
            q: Arc::new(|p| (std::f64::consts::PI * p[0] / 5.0).cos()),
            description: "q = cos(pi x / 5)".into(),
        },
        reference: Reference::FineMesh { n: 320 },
        // a is quadratic in y: three points keep ∫ a·∇(N_i N_j) = 0 exact
        quadrature: 3,
        velocity_scale: VelocityScale::Domain,
        projection: ProjectionSpace::Constrained,
        mesh_multiple: 1,
        published_qoi: Some(0.0175),
        default_sizes: vec![10, 20, 40, 80, 160],
    }
}

/// x - (1 - e^{100x}) / (1 - e^{100}) and its first two derivatives.
pub(crate) fn layer_factor(x: f64) -> (f64, f64, f64) {
    // (e^{100x} - 1)/(e^{100} - 1) = e^{100(x-1)} (1 - e^{-100x}) / (1 - e^{-100})
    let denom = 1.0 - (-100.0f64).exp();
    let e = (100.0 * (x - 1.0)).exp() / denom;
    let g = e - (-100.0f64).exp() / denom;
    (x - g, 1.0 - 100.0 * e, -1.0e4 * e)
}

fn example_boundary_layer() -> ProblemSpec {
    let (k, s) = (0.01, 1e-4);
    let (ax, ay) = (1.0, 1.0);
    // f = L u for u = X(x) Y(y): -k(X''Y + XY'') + ax X'Y + ay XY' + s XY
    let forcing: ScalarFn = Arc::new(move |p| {
        let (x, dx, ddx) = layer_factor(p[0]);
        let (y, dy, ddy) = layer_factor(p[1]);
        -k * (ddx * y + x * ddy) + ax * dx * y + ay * x * dy + s * x * y
    });
    ProblemSpec {
        id: "ex3".into(),
        domain: DomainKind::Square,
        coefficients: CoefficientField {
            k,
            s,
            advection: Arc::new(move |_| [ax, ay]),
            forcing,
        },
        dirichlet: DirichletData::homogeneous(),
        qoi: QoiSpec {
            q: Arc::new(|p| {
                if p[0] >= 0.75 && p[1] >= 0.75 {
                    1.0
                } else {
                    0.0
                }
            }),
            description: "q = indicator of (0.75,1)^2".into(),
        },
        reference: Reference::Analytic {
            solution: Arc::new(|p| layer_factor(p[0]).0 * layer_factor(p[1]).0),
        },
        quadrature: 4,
        velocity_scale: VelocityScale::Element,
        projection: ProjectionSpace::Constrained,
        mesh_multiple: 4,
        published_qoi: Some(0.0436),
        default_sizes: vec![8, 20, 40, 80, 160],
    }
}

fn example_lshape() -> ProblemSpec {
    ProblemSpec {
        id: "ex4".into(),
        domain: DomainKind::Lshape,
        coefficients: CoefficientField {
            k: 0.001,
            s: 0.0,
            advection: Arc::new(|_| [1.0, 1.0]),
            forcing: constant(1.0),
        },
        dirichlet: DirichletData::homogeneous(),
        qoi: QoiSpec {
            q: constant(1.0),
            description: "q = 1 on the L-shaped domain".into(),
        },
        reference: Reference::FineMesh { n: 512 },
        quadrature: 2,
        velocity_scale: VelocityScale::Element,
        projection: ProjectionSpace::Constrained,
        mesh_multiple: 2,
        published_qoi: Some(0.2063),
        default_sizes: vec![16, 32, 64, 128],
    }
}

/// τ = (c1 k / h² + c2 |a| / h + c3 s)⁻¹
pub fn eval_tau(
    k: f64,
    a_norm: f64,
    s: f64,
    h: f64,
    constants: &StabilizationConstants,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("element size must be positive, got {h}")));
    }
    let inv = constants.c1 * k / (h * h) + constants.c2 * a_norm / h + constants.c3 * s;
    if !(inv > 0.0) {
        return Err(Error::DivisionByZero);
    }
    Ok(1.0 / inv)
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// τ for every element, sharing one code path between assembly and estimation.
pub fn tau_per_element(
    mesh: &Mesh,
    problem: &ProblemSpec,
    constants: &StabilizationConstants,
    reference: &ReferenceElement,
) -> Result<Vec<f64>> {
    let c = &problem.coefficients;
    let mut a_norm = Vec::with_capacity(mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let ev = map_to_physical(mesh, e, reference)?;
        let m = ev
            .points
            .iter()
            .map(|&x| norm((c.advection)(x)))
            .fold(0.0, f64::max);
        a_norm.push(m);
    }
    if problem.velocity_scale == VelocityScale::Domain {
        let global = a_norm.iter().copied().fold(0.0, f64::max);
        a_norm.iter_mut().for_each(|a| *a = global);
    }
    a_norm
        .iter()
        .enumerate()
        .map(|(e, &a)| eval_tau(c.k, a, c.s, mesh.h(e), constants))
        .collect()
}

/// Cells per unit length of the fixed grid used by [`eval_exact_qoi`].
const EXACT_QOI_GRID_1D: usize = 20_000;
const EXACT_QOI_GRID_2D: usize = 400;

/// ∫ q u over the domain for a problem with a closed-form solution, by composite
/// Gauss quadrature on a fixed fine grid (independent of any finite element mesh).
pub fn eval_exact_qoi(problem: &ProblemSpec, points_per_direction: usize) -> Result<f64> {
    let u = problem.analytic_solution().ok_or_else(|| {
        Error::Unsupported(format!("problem {} has no analytic solution", problem.id))
    })?;
    integrate_over_domain(problem.domain, points_per_direction, |p| (problem.qoi.q)(p) * u(p))
}

/// Composite Gauss quadrature of `g` on the fixed grid for `domain`.
pub fn integrate_over_domain(
    domain: DomainKind,
    points_per_direction: usize,
    g: impl Fn(Point) -> f64,
) -> Result<f64> {
    let rule = quadrature_rule(points_per_direction, 1)?;
    let mut total = 0.0;
    match domain {
        DomainKind::Interval => {
            let n = EXACT_QOI_GRID_1D;
            let h = 1.0 / n as f64;
            for i in 0..n {
                let x0 = i as f64 * h;
                let mut cell = 0.0;
                for (p, w) in rule.points.iter().zip(&rule.weights) {
                    cell += w * g([x0 + 0.5 * h * (1.0 + p[0]), 0.0]);
                }
                total += 0.5 * h * cell;
            }
        }
        DomainKind::Square | DomainKind::Lshape => {
            let n = EXACT_QOI_GRID_2D;
            let h = 1.0 / n as f64;
            for j in 0..n {
                let mut row = 0.0;
                for i in 0..n {
                    if domain == DomainKind::Lshape && i >= n / 2 && j < n / 2 {
                        continue;
                    }
                    let (x0, y0) = (i as f64 * h, j as f64 * h);
                    for (py, wy) in rule.points.iter().zip(&rule.weights) {
                        for (px, wx) in rule.points.iter().zip(&rule.weights) {
                            let x = x0 + 0.5 * h * (1.0 + px[0]);
                            let y = y0 + 0.5 * h * (1.0 + py[0]);
                            row += wx * wy * g([x, y]);
                        }
                    }
                }
                total += 0.25 * h * h * row;
            }
        }
    }
    Ok(total)
}

/// On-disk description of a user-defined problem.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default = "default_id")]
    pub id: String,
    pub domain: DomainKind,
    #[serde(default)]
    pub n: Option<usize>,
    pub k: f64,
    #[serde(default)]
    pub s: f64,
    /// Either a single expression (x-component, 1D) or two expressions.
    pub a: AdvectionSpec,
    #[serde(default = "zero_expr")]
    pub f: Expr,
    pub q: Expr,
    #[serde(default)]
    pub dirichlet: BTreeMap<BoundaryTag, Expr>,
    /// Require every boundary node to be prescribed.
    #[serde(default = "default_true")]
    pub full_dirichlet: bool,
    #[serde(default)]
    pub solution: Option<Expr>,
    #[serde(default)]
    pub reference_n: Option<usize>,
    #[serde(default)]
    pub quadrature: Option<usize>,
    #[serde(default)]
    pub velocity_scale: VelocityScale,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AdvectionSpec {
    Vector([Expr; 2]),
    Scalar(Expr),
}

fn default_id() -> String {
    "custom".into()
}

fn zero_expr() -> Expr {
    Expr::Num(0.0)
}

fn default_true() -> bool {
    true
}

fn expr_fn(e: Expr) -> ScalarFn {
    Arc::new(move |p| e.eval(p))
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<ProblemFile> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_problem(self) -> Result<ProblemSpec> {
        let advection: VectorFn = match self.a {
            AdvectionSpec::Vector([ax, ay]) => Arc::new(move |p| [ax.eval(p), ay.eval(p)]),
            AdvectionSpec::Scalar(ax) => Arc::new(move |p| [ax.eval(p), 0.0]),
        };
        let mut dirichlet = if self.full_dirichlet {
            DirichletData::full()
        } else {
            DirichletData::partial()
        };
        for (tag, e) in self.dirichlet {
            dirichlet = dirichlet.with_fn(tag, expr_fn(e));
        }
        let reference = match (self.solution, self.reference_n) {
            (Some(u), _) => Reference::Analytic { solution: expr_fn(u) },
            (None, Some(n)) => Reference::FineMesh { n },
            (None, None) => Reference::FineMesh {
                n: 4 * self.n.unwrap_or(64),
            },
        };
        let problem = ProblemSpec {
            id: self.id,
            domain: self.domain,
            coefficients: CoefficientField {
                k: self.k,
                s: self.s,
                advection,
                forcing: expr_fn(self.f),
            },
            dirichlet,
            qoi: QoiSpec {
                q: expr_fn(self.q),
                description: "user-defined q".into(),
            },
            reference,
            quadrature: self.quadrature.unwrap_or(2),
            velocity_scale: self.velocity_scale,
            projection: ProjectionSpace::Constrained,
            mesh_multiple: if self.domain == DomainKind::Lshape { 2 } else { 1 },
            published_qoi: None,
            default_sizes: self.n.map(|n| vec![n]).unwrap_or_else(|| vec![10, 20, 40]),
        };
        problem.validate()?;
        Ok(problem)
    }
}
