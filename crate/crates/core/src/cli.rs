//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::{
    compute_reference_qoi, export_fields, least_squares_rate, run_convergence, run_level, solve_field,
    write_records, ReferenceQoi, Settings, SolvePath,
};
use crate::assembly::ProblemKind;
use crate::estimators::qoi_value;
use crate::fe::ReferenceElement;
use crate::mesh::HDefinition;
use crate::problem::{builtin_example, example_summary, ProblemFile, ProblemSpec, ProjectionSpace, VelocityScale, EXAMPLE_IDS};
use crate::solver::SolverKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "osgs-goal", version, about = "OSGS-stabilized CDR solver with goal-oriented error estimates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the built-in examples.
    ListExamples,
    /// Solve the primal problem and report Q(u_h).
    Solve(CommonArgs),
    /// Solve primal and dual problems and report η1, η2 and effectivities.
    Estimate(CommonArgs),
    /// Run a mesh-refinement study and write a CSV table.
    Convergence(ConvergenceArgs),
    /// Compute the reference value of the quantity of interest.
    Reference(CommonArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Built-in example id (ex1..ex4).
    #[arg(long, conflicts_with = "problem")]
    pub example: Option<String>,
    /// JSON problem description.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// JSON file with default values for any of these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mesh divisions per unit length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Gauss points per direction.
    #[arg(long)]
    pub quadrature: Option<usize>,
    /// Element size used in τ: diameter or edge.
    #[arg(long)]
    pub h_definition: Option<String>,
    /// monolithic or condensed.
    #[arg(long)]
    pub solve_path: Option<String>,
    /// Characteristic velocity in τ: element or domain.
    #[arg(long)]
    pub velocity_scale: Option<String>,
    /// Projection space of the residual: constrained or full.
    #[arg(long)]
    pub projection: Option<String>,
    /// Mesh size of the fine-mesh reference.
    #[arg(long)]
    pub reference_n: Option<usize>,
    /// direct or bicgstab.
    #[arg(long)]
    pub solver: Option<String>,
    /// Relative residual target of the iterative solver.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Worker threads for assembly.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated, strictly increasing mesh sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

/// Same keys as the long options, with `-` replaced by `_`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    example: Option<String>,
    problem: Option<PathBuf>,
    n: Option<usize>,
    quadrature: Option<usize>,
    h_definition: Option<String>,
    solve_path: Option<String>,
    velocity_scale: Option<String>,
    projection: Option<String>,
    reference_n: Option<usize>,
    solver: Option<String>,
    tolerance: Option<f64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    sizes: Option<Vec<usize>>,
}

fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl CommonArgs {
    /// Fills unset options from the config file.
    fn merged(mut self, cfg: &ConfigFile) -> Self {
        if self.example.is_none() && self.problem.is_none() {
            self.example = cfg.example.clone();
            self.problem = cfg.problem.clone();
        }
        self.n = self.n.or(cfg.n);
        self.quadrature = self.quadrature.or(cfg.quadrature);
        self.h_definition = self.h_definition.or_else(|| cfg.h_definition.clone());
        self.solve_path = self.solve_path.or_else(|| cfg.solve_path.clone());
        self.velocity_scale = self.velocity_scale.or_else(|| cfg.velocity_scale.clone());
        self.projection = self.projection.or_else(|| cfg.projection.clone());
        self.reference_n = self.reference_n.or(cfg.reference_n);
        self.solver = self.solver.or_else(|| cfg.solver.clone());
        self.tolerance = self.tolerance.or(cfg.tolerance);
        self.threads = self.threads.or(cfg.threads);
        self.out = self.out.or_else(|| cfg.out.clone());
        self
    }

    fn problem_spec(&self) -> Result<(ProblemSpec, Option<usize>)> {
        match (&self.example, &self.problem) {
            (Some(id), _) => Ok((builtin_example(id)?, None)),
            (None, Some(path)) => {
                let file = ProblemFile::load(path)?;
                let n = file.n;
                Ok((file.into_problem()?, n))
            }
            (None, None) => Err(Error::InvalidArgument("one of --example or --problem is required".into())),
        }
    }

    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(h) = &self.h_definition {
            s.h_definition = h.parse::<HDefinition>()?;
        }
        if let Some(p) = &self.solve_path {
            s.solve_path = p.parse::<SolvePath>()?;
        }
        if let Some(v) = &self.velocity_scale {
            s.velocity_scale = Some(v.parse::<VelocityScale>()?);
        }
        if let Some(v) = &self.projection {
            s.projection = Some(v.parse::<ProjectionSpace>()?);
        }
        if let Some(k) = &self.solver {
            s.solver.kind = k.parse::<SolverKind>()?;
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1), got {t}")));
            }
            s.solver.tolerance = t;
        }
        if let Some(q) = self.quadrature {
            if !(1..=5).contains(&q) {
                return Err(Error::InvalidArgument(format!("quadrature must be 1..=5, got {q}")));
            }
            s.quadrature = Some(q);
        }
        s.cache_dir = self.out.as_ref().map(|d| d.join("reference_cache"));
        Ok(s)
    }

    fn mesh_size(&self, problem: &ProblemSpec, file_n: Option<usize>) -> usize {
        self.n
            .or(file_n)
            .unwrap_or_else(|| problem.default_sizes.first().copied().unwrap_or(20))
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        // A pool that is already initialized (repeated in-process calls) is left as is.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::UnknownExample(_) | Error::Config(_) | Error::Expression(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    match cli.command {
        Command::ListExamples => {
            for id in EXAMPLE_IDS {
                writeln!(out, "{id}  {}", example_summary(id).unwrap_or(""))?;
            }
            Ok(())
        }
        Command::Solve(args) => cmd_solve(with_config(args)?, out),
        Command::Estimate(args) => cmd_estimate(with_config(args)?, out),
        Command::Reference(args) => cmd_reference(with_config(args)?, out),
        Command::Convergence(mut args) => {
            if let Some(path) = &args.common.config {
                let cfg = load_config(path)?;
                args.sizes = args.sizes.or_else(|| cfg.sizes.clone());
                args.common = args.common.merged(&cfg);
            }
            cmd_convergence(args, out)
        }
    }
}

fn with_config(args: CommonArgs) -> Result<CommonArgs> {
    match &args.config {
        Some(path) => {
            let cfg = load_config(path)?;
            Ok(args.merged(&cfg))
        }
        None => Ok(args),
    }
}

fn cmd_solve<W: Write>(args: CommonArgs, out: &mut W) -> Result<()> {
    init_threads(args.threads)?;
    let (problem, file_n) = args.problem_spec()?;
    let settings = args.settings()?;
    let n = args.mesh_size(&problem, file_n);
    let p = settings.apply(&problem);
    let mesh = settings.build_mesh(&p, n)?;
    let (field, report, system) = solve_field(&mesh, &p, &settings, ProblemKind::Primal)?;
    let reference = ReferenceElement::new(mesh.dim(), settings.quadrature_for(&p))?;
    let q = qoi_value(&field, &p.qoi, &mesh, &reference)?;
    writeln!(out, "example {} n {} dofs {}", p.id, n, system.n_u())?;
    writeln!(out, "Q_uh {q:.12e}")?;
    writeln!(out, "relative_residual {:.3e}", report.relative_residual)?;
    Ok(())
}

fn cmd_reference<W: Write>(args: CommonArgs, out: &mut W) -> Result<()> {
    init_threads(args.threads)?;
    let (problem, _) = args.problem_spec()?;
    let settings = args.settings()?;
    let r = compute_reference_qoi(&problem, args.n.or(args.reference_n), &settings)?;
    writeln!(out, "example {} Q_ref {:.12e} ({})", problem.id, r.value, r.provenance)?;
    Ok(())
}

fn cmd_estimate<W: Write>(args: CommonArgs, out: &mut W) -> Result<()> {
    init_threads(args.threads)?;
    let (problem, file_n) = args.problem_spec()?;
    let settings = args.settings()?;
    let n = args.mesh_size(&problem, file_n);
    let reference = compute_reference_qoi(&problem, args.reference_n, &settings)?;
    let level = run_level(&problem, n, &settings, &reference)?;
    print_level(out, &level.report, &reference)?;
    if let Some(dir) = &args.out {
        let (vtk, csv) = export_fields(&level, dir, &format!("{}_{}", problem.id, n))?;
        writeln!(out, "wrote {} and {}", vtk.display(), csv.display())?;
    }
    Ok(())
}

fn print_level<W: Write>(out: &mut W, r: &crate::estimators::EstimatorReport, reference: &ReferenceQoi) -> Result<()> {
    writeln!(out, "example {} n {} h {:.6e} dofs {}", r.example, r.n, r.h, r.dofs)?;
    writeln!(out, "Q_uh  {:.12e}", r.q_uh)?;
    writeln!(out, "Q_ref {:.12e} ({})", r.q_ref, reference.provenance)?;
    writeln!(out, "error {:.6e}", r.error())?;
    writeln!(out, "eta1  {:.6e}  ieff1 {:.6}", r.eta1.total, r.ieff1.value)?;
    writeln!(out, "eta2  {:.6e}  ieff2 {:.6}", r.eta2.total, r.ieff2.value)?;
    if !r.ieff1.sign_agrees {
        writeln!(out, "note: sign of eta differs from the sign of the error")?;
    }
    Ok(())
}

fn cmd_convergence<W: Write>(args: ConvergenceArgs, out: &mut W) -> Result<()> {
    let common = args.common;
    init_threads(common.threads)?;
    let (problem, _) = common.problem_spec()?;
    let settings = common.settings()?;
    let sizes = args.sizes.unwrap_or_else(|| problem.default_sizes.clone());
    let reference = compute_reference_qoi(&problem, common.reference_n, &settings)?;
    let records = run_convergence(&problem, &sizes, &settings, &reference)?;
    let mut table = Vec::new();
    write_records(&mut table, &records)?;
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}_convergence.csv", problem.id));
            std::fs::write(&path, &table)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        None => out.write_all(&table)?,
    }
    if let Some(rate) = least_squares_rate(&records) {
        writeln!(out, "least-squares rate {rate:.4}")?;
    }
    if records.len() < sizes.len() {
        eprintln!("warning: {} of {} levels failed", sizes.len() - records.len(), sizes.len());
    }
    Ok(())
}
