//! Solve/estimate pipeline and the convergence studies built on it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_dual, assemble_primal, condense_lumped, BlockSystem, ProblemKind};
use crate::error::{Error, Result};
use crate::estimators::{effectivity, qoi_value, EstimationContext, EstimatorReport, SolutionField};
use crate::fe::ReferenceElement;
use crate::mesh::{build_mesh, HDefinition, Mesh};
use crate::problem::{
    eval_exact_qoi, ProblemSpec, ProjectionSpace, Reference, StabilizationConstants, VelocityScale,
};
use crate::solver::{solve, SolveReport, SolverOptions};
use crate::vtk::{write_vtk, VtkFields};

/// Gauss points per direction for the analytic reference integrals.
pub const REFERENCE_QUADRATURE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolvePath {
    /// 2×2 block system with the consistent Gram matrix.
    #[default]
    Monolithic,
    /// ξ eliminated with the lumped Gram matrix.
    Condensed,
}

impl std::str::FromStr for SolvePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolithic" => Ok(SolvePath::Monolithic),
            "condensed" => Ok(SolvePath::Condensed),
            other => Err(Error::InvalidArgument(format!(
                "solve path must be 'monolithic' or 'condensed', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub constants: StabilizationConstants,
    pub h_definition: HDefinition,
    /// Overrides the problem's Gauss points per direction.
    pub quadrature: Option<usize>,
    /// Overrides the problem's characteristic-velocity choice.
    pub velocity_scale: Option<VelocityScale>,
    /// Overrides the problem's projection space.
    pub projection: Option<ProjectionSpace>,
    pub solve_path: SolvePath,
    pub solver: SolverOptions,
    /// Directory for cached fine-mesh reference values.
    pub cache_dir: Option<PathBuf>,
}

impl Settings {
    pub fn quadrature_for(&self, problem: &ProblemSpec) -> usize {
        self.quadrature.unwrap_or(problem.quadrature)
    }

    /// The problem with any settings overrides applied.
    pub fn apply(&self, problem: &ProblemSpec) -> ProblemSpec {
        let mut p = problem.clone();
        if let Some(v) = self.velocity_scale {
            p.velocity_scale = v;
        }
        if let Some(v) = self.projection {
            p.projection = v;
        }
        p
    }

    pub fn build_mesh(&self, problem: &ProblemSpec, n: usize) -> Result<Mesh> {
        let mesh = build_mesh(problem.domain, n)?;
        problem.check_mesh(&mesh)?;
        if self.h_definition == HDefinition::Diameter {
            Ok(mesh)
        } else {
            mesh.with_h_definition(self.h_definition)
        }
    }
}

/// Assembles and solves one problem (primal or dual) on `mesh`.
pub fn solve_field(
    mesh: &Mesh,
    problem: &ProblemSpec,
    settings: &Settings,
    kind: ProblemKind,
) -> Result<(SolutionField, SolveReport, BlockSystem)> {
    let order = settings.quadrature_for(problem);
    let system = match kind {
        ProblemKind::Primal => assemble_primal(mesh, problem, &settings.constants, order)?,
        ProblemKind::Dual => assemble_dual(mesh, problem, &settings.constants, order)?,
    };
    let (field, report) = match settings.solve_path {
        SolvePath::Monolithic => {
            let (a, rhs) = system.monolithic()?;
            let report = solve(&a, &rhs, &settings.solver)?;
            let (u, xi) = system.split(&report.solution);
            (SolutionField::new(kind, u, Some(xi)), report)
        }
        SolvePath::Condensed => {
            let condensed = condense_lumped(&system)?;
            let report = solve(&condensed.matrix, &condensed.rhs, &settings.solver)?;
            let xi = condensed.recover_projection(&system, &report.solution);
            let u = system.dofmap.expand(&report.solution);
            (SolutionField::new(kind, u, Some(xi)), report)
        }
    };
    Ok((field, report, system))
}

/// Reference value of Q(u) and where it came from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReferenceQoi {
    pub value: f64,
    pub provenance: String,
}

/// Everything computed on one mesh.
#[derive(Debug, Clone)]
pub struct LevelOutcome {
    pub mesh: Mesh,
    pub primal: SolutionField,
    pub dual: SolutionField,
    pub tau: Vec<f64>,
    pub report: EstimatorReport,
    pub solves: [SolveReport; 2],
}

/// Primal and dual solve, Q(u_h), η1, η2 and effectivities on an n-division mesh.
pub fn run_level(
    problem: &ProblemSpec,
    n: usize,
    settings: &Settings,
    reference: &ReferenceQoi,
) -> Result<LevelOutcome> {
    let problem = settings.apply(problem);
    let mesh = settings.build_mesh(&problem, n)?;
    let (primal, primal_report, primal_system) = solve_field(&mesh, &problem, settings, ProblemKind::Primal)?;
    let (dual, dual_report, _) = solve_field(&mesh, &problem, settings, ProblemKind::Dual)?;
    let order = settings.quadrature_for(&problem);
    let ctx = EstimationContext::new(&mesh, &problem, &settings.constants, order)?;
    let q_uh = qoi_value(&primal, &problem.qoi, &mesh, &ctx.reference)?;
    let eta1 = ctx.eta1(&primal)?;
    let eta2 = ctx.eta2(&primal, &dual)?;
    let report = EstimatorReport {
        example: problem.id.clone(),
        n,
        h: mesh.h_max(),
        dofs: primal_system.n_u(),
        q_uh,
        q_ref: reference.value,
        ieff1: effectivity(reference.value, q_uh, eta1.total),
        ieff2: effectivity(reference.value, q_uh, eta2.total),
        eta1,
        eta2,
    };
    if !report.ieff1.sign_agrees {
        info!("{} n={n}: estimator sign disagrees with the error", problem.id);
    }
    Ok(LevelOutcome {
        tau: ctx.tau,
        mesh,
        primal,
        dual,
        report,
        solves: [primal_report, dual_report],
    })
}

fn cache_key(problem: &ProblemSpec, n: usize, settings: &Settings) -> String {
    let p = settings.apply(problem);
    format!(
        "{}_n{}_q{}_{:?}_{:?}_{:?}_{:?}_v{}.json",
        p.id,
        n,
        settings.quadrature_for(&p),
        settings.h_definition,
        p.velocity_scale,
        p.projection,
        settings.solve_path,
        env!("CARGO_PKG_VERSION")
    )
    .to_lowercase()
}

/// Q(u) from the analytic solution, or Q(u_h) on a fine mesh (`override_n` or the
/// problem's reference size). Fine-mesh values are cached when a cache directory is set.
pub fn compute_reference_qoi(
    problem: &ProblemSpec,
    override_n: Option<usize>,
    settings: &Settings,
) -> Result<ReferenceQoi> {
    let n = match (&problem.reference, override_n) {
        (Reference::Analytic { .. }, None) => {
            let value = eval_exact_qoi(problem, REFERENCE_QUADRATURE)?;
            return Ok(ReferenceQoi {
                value,
                provenance: "analytic".into(),
            });
        }
        (_, Some(n)) => n,
        (Reference::FineMesh { n }, None) => *n,
    };
    let cache = settings
        .cache_dir
        .as_ref()
        .map(|d| d.join(cache_key(problem, n, settings)));
    if let Some(path) = &cache {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(r) = serde_json::from_str::<ReferenceQoi>(&text) {
                info!("reference for {} read from {}", problem.id, path.display());
                return Ok(r);
            }
        }
    }
    let p = settings.apply(problem);
    let mesh = settings.build_mesh(&p, n)?;
    let (primal, _, _) = solve_field(&mesh, &p, settings, ProblemKind::Primal).map_err(|e| match e {
        Error::Factorization(msg) => Error::Factorization(format!(
            "{msg}; reference mesh n={n} may be too large, rerun with a smaller reference n"
        )),
        other => other,
    })?;
    let reference = ReferenceElement::new(mesh.dim(), settings.quadrature_for(&p))?;
    let value = qoi_value(&primal, &p.qoi, &mesh, &reference)?;
    let out = ReferenceQoi {
        value,
        provenance: format!("fine-mesh-n{n}"),
    };
    if let Some(path) = &cache {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&out)?)?;
    }
    Ok(out)
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub example: String,
    pub n: usize,
    pub h: f64,
    pub dofs: usize,
    #[serde(rename = "Q_uh")]
    pub q_uh: f64,
    #[serde(rename = "Q_ref")]
    pub q_ref: f64,
    pub ref_provenance: String,
    pub err_abs: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub ieff1: f64,
    pub ieff2: f64,
    pub rate_pairwise: Option<f64>,
}

impl ConvergenceRecord {
    pub fn from_report(report: &EstimatorReport, reference: &ReferenceQoi) -> Self {
        ConvergenceRecord {
            example: report.example.clone(),
            n: report.n,
            h: report.h,
            dofs: report.dofs,
            q_uh: report.q_uh,
            q_ref: report.q_ref,
            ref_provenance: reference.provenance.clone(),
            err_abs: report.error().abs(),
            eta1: report.eta1.total,
            eta2: report.eta2.total,
            ieff1: report.ieff1.value,
            ieff2: report.ieff2.value,
            rate_pairwise: None,
        }
    }
}

/// Fills `rate_pairwise` from consecutive levels: log(e_i/e_{i-1}) / log(h_i/h_{i-1}).
pub fn fill_pairwise_rates(records: &mut [ConvergenceRecord]) {
    for i in 1..records.len() {
        let (a, b) = (&records[i - 1], &records[i]);
        let rate = (b.err_abs / a.err_abs).ln() / (b.h / a.h).ln();
        records[i].rate_pairwise = rate.is_finite().then_some(rate);
    }
}

/// Least-squares slope of log|error| against log h.
pub fn least_squares_rate(records: &[ConvergenceRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.err_abs > 0.0)
        .map(|r| (r.h.ln(), r.err_abs.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Runs every mesh size and returns one record per level that solved. A level
/// whose solve fails is logged and skipped.
pub fn run_convergence(
    problem: &ProblemSpec,
    sizes: &[usize],
    settings: &Settings,
    reference: &ReferenceQoi,
) -> Result<Vec<ConvergenceRecord>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no mesh sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "mesh sizes must be strictly increasing, got {sizes:?}"
        )));
    }
    let mut records = Vec::with_capacity(sizes.len());
    for &n in sizes {
        match run_level(problem, n, settings, reference) {
            Ok(level) => {
                info!(
                    "{} n={n}: Q_uh={:.6e} eta1={:.6e} ieff1={:.4}",
                    problem.id, level.report.q_uh, level.report.eta1.total, level.report.ieff1.value
                );
                records.push(ConvergenceRecord::from_report(&level.report, reference));
            }
            Err(e) => error!("{} n={n}: level aborted: {e}", problem.id),
        }
    }
    fill_pairwise_rates(&mut records);
    Ok(records)
}

pub fn write_records<W: Write>(w: W, records: &[ConvergenceRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    if records.is_empty() {
        writer.write_record([
            "example", "n", "h", "dofs", "Q_uh", "Q_ref", "ref_provenance", "err_abs", "eta1", "eta2",
            "ieff1", "ieff2", "rate_pairwise",
        ])?;
    }
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<ConvergenceRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Writes `{stem}.vtk` (point data u_h, z_h, projections; cell data η1^K, η2^K, τ_K)
/// and `{stem}.csv` (one row per element) into `dir`.
pub fn export_fields(level: &LevelOutcome, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let mesh = &level.mesh;
    if mesh.num_elements() == 0 {
        return Err(Error::InvalidArgument("cannot export an empty mesh".into()));
    }
    std::fs::create_dir_all(dir)?;
    let vtk_path = dir.join(format!("{stem}.vtk"));
    let csv_path = dir.join(format!("{stem}.csv"));
    let xi = level.primal.projection.as_deref().ok_or(Error::MissingProjection)?;
    let xi_d = level.dual.projection.as_deref().ok_or(Error::MissingProjection)?;
    let fields = VtkFields {
        point: vec![
            ("u_h", level.primal.values.as_slice()),
            ("z_h", level.dual.values.as_slice()),
            ("xi_h", xi),
            ("xi_h_dual", xi_d),
        ],
        cell: vec![
            ("eta1", level.report.eta1.per_element.as_slice()),
            ("eta2", level.report.eta2.per_element.as_slice()),
            ("tau", level.tau.as_slice()),
        ],
    };
    let title = format!(
        "{} n={} Q_uh={:e} eta1={:e} eta2={:e}",
        level.report.example, level.report.n, level.report.q_uh, level.report.eta1.total, level.report.eta2.total
    );
    write_vtk(BufWriter::new(File::create(&vtk_path)?), mesh, &title, &fields)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&csv_path)?));
    w.write_record(["element", "cx", "cy", "h", "tau", "eta1", "eta2"])?;
    for e in 0..mesh.num_elements() {
        let cell = mesh.element(e);
        let (mut cx, mut cy) = (0.0, 0.0);
        for &v in cell {
            cx += mesh.nodes()[v][0];
            cy += mesh.nodes()[v][1];
        }
        let k = cell.len() as f64;
        w.write_record([
            e.to_string(),
            (cx / k).to_string(),
            (cy / k).to_string(),
            mesh.h(e).to_string(),
            level.tau[e].to_string(),
            level.report.eta1.per_element[e].to_string(),
            level.report.eta2.per_element[e].to_string(),
        ])?;
    }
    w.flush()?;
    Ok((vtk_path, csv_path))
}
