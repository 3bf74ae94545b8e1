//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 non-convergence,
//! 3 negative verdict (nonempty Aubry set, failed 1D check).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::continuation::{history_csv, run_continuation_with, ContinuationConfig, StepRecord};
use crate::mc::{simulate_cost_of, McConfig, McEstimate};
use crate::mesh::{problem_mesh, TriMesh};
use crate::model::{aubry_set, ProblemSpec};
use crate::postprocess::{export_field, read_field_csv, trace_trajectory, FieldFormat};
use crate::viscosity1d::{check_boundary, check_viscosity, default_rhs, CandidateSelector, Verdict};
use crate::{Error, Point, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_NEGATIVE: i32 = 3;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Cells of the base grid along x and y; each cell is split into two triangles.
    pub nx: usize,
    pub ny: usize,
    /// Number of uniform red refinements of the base grid.
    pub refine: u32,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { nx: 2, ny: 1, refine: 6 }
    }
}

/// Contents of a configuration file. A run manifest is itself a valid
/// configuration: its `run` section is ignored on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: ContinuationConfig,
    #[serde(default)]
    pub mc: McConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.problem.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn build_mesh(&self) -> Result<TriMesh> {
        problem_mesh(&self.problem, self.mesh.nx, self.mesh.ny, self.mesh.refine)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub mesh_seconds: f64,
    pub solve_seconds: f64,
    pub write_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool: String,
    pub version: String,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    /// `running`, `converged`, `not_converged` or `failed`.
    pub status: String,
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub mesh_size: f64,
    pub outputs: Vec<String>,
    pub timings: Timings,
}

/// Resolved configuration plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub config: RunConfig,
    pub run: RunInfo,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Writes through a temporary file and a rename so readers never see a
    /// partial manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let tmp = dir.join(".manifest.json.tmp");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "coupled-eikonal", version, about = "Value functions for path planning with random breakdowns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the coupled system and write u1.csv, u2.csv, history.csv and manifest.json.
    Solve(SolveArgs),
    /// Trace an optimal path from a start point on a solved problem.
    Trace(TraceArgs),
    /// Estimate the mode-1 expected cost by Monte Carlo simulation.
    Mc(McArgs),
    /// Report whether the Aubry set of a configuration is empty.
    Aubry(AubryArgs),
    /// Check a 1D candidate against the viscosity-solution conditions.
    #[command(name = "verify-1d")]
    Verify1d(Verify1dArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Configuration file (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    epsilon0: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    refine: Option<u32>,
    /// Drop the boundary integral −ε(∇u·n, w) (the default).
    #[arg(long, conflicts_with = "paper_boundary_term")]
    no_paper_boundary_term: bool,
    /// Keep the boundary integral −ε(∇u·n, w).
    #[arg(long)]
    paper_boundary_term: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write u1.vtk and u2.vtk.
    #[arg(long)]
    vtk: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Args)]
struct TraceArgs {
    /// Directory written by `solve`.
    #[arg(long, short)]
    solution: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
    #[arg(long, allow_hyphen_values = true)]
    y: f64,
    #[arg(long, value_enum, default_value = "1")]
    mode: ModeArg,
    /// Step length; defaults to half the mesh size.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: usize,
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long, short)]
    solution: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
    #[arg(long, allow_hyphen_values = true)]
    y: f64,
    #[arg(long, short)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Print the CSV header before the row.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct AubryArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    refine: Option<u32>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CandidateArg {
    Smooth,
    Min,
    Max,
    Perturbed,
}

#[derive(Debug, Args)]
struct Verify1dArgs {
    #[arg(long, value_enum, default_value = "min")]
    candidate: CandidateArg,
    /// Parameter C of the min/max families.
    #[arg(long = "c", default_value_t = 0.5)]
    c: f64,
    /// Extra condition `X=VALUE`, e.g. `0=2`; repeatable.
    #[arg(long = "condition", value_parser = parse_condition, allow_hyphen_values = true)]
    conditions: Vec<(f64, f64)>,
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

fn parse_condition(s: &str) -> std::result::Result<(f64, f64), String> {
    let (x, v) = s.split_once('=').ok_or_else(|| format!("expected X=VALUE, got `{s}`"))?;
    let x = x.trim().parse::<f64>().map_err(|e| format!("bad point `{x}`: {e}"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("bad value `{v}`: {e}"))?;
    Ok((x, v))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Trace(a) => cmd_trace(&a),
        Command::Mc(a) => cmd_mc(&a),
        Command::Aubry(a) => cmd_aubry(&a),
        Command::Verify1d(a) => cmd_verify_1d(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::LinearNonConvergence { .. } | Error::Divergence { .. } | Error::Initialization { .. } => {
            EXIT_NOT_CONVERGED
        }
        _ => EXIT_USAGE,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Nodal values of `(u1, u2)`.
type Fields = (Vec<f64>, Vec<f64>);

fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    let s = &mut cfg.solver;
    if let Some(v) = a.epsilon0 {
        s.epsilon0 = v;
    }
    if let Some(v) = a.ratio {
        s.ratio = v;
    }
    if let Some(v) = a.theta {
        s.theta = v;
    }
    if let Some(v) = a.threads {
        s.threads = v;
    }
    if a.no_paper_boundary_term {
        s.include_paper_boundary_term = false;
    }
    if a.paper_boundary_term {
        s.include_paper_boundary_term = true;
    }
    if let Some(v) = a.refine {
        cfg.mesh.refine = v;
    }

    let t0 = Instant::now();
    let mesh = cfg.build_mesh()?;
    let mesh_seconds = t0.elapsed().as_secs_f64();
    cfg.solver = cfg.solver.resolved(&mesh);
    cfg.solver.validate(&mesh)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut outputs = vec!["u1.csv".to_string(), "u2.csv".to_string(), "history.csv".to_string()];
    if a.vtk {
        outputs.extend(["u1.vtk".to_string(), "u2.vtk".to_string()]);
    }
    let mut manifest = RunManifest {
        config: cfg.clone(),
        run: RunInfo {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: a.config.clone(),
            output_dir: a.out.clone(),
            status: "running".into(),
            n_vertices: mesh.n_vertices(),
            n_triangles: mesh.n_triangles(),
            mesh_size: mesh.mesh_size(),
            outputs,
            timings: Timings {
                mesh_seconds,
                ..Default::default()
            },
        },
    };
    manifest.write(&a.out)?;

    let t1 = Instant::now();
    let mut last: Option<Fields> = None;
    let result = run_continuation_with(&mesh, &cfg.problem, &cfg.solver, |r, u1, u2| {
        log::info!(
            "level {} eps {:.4e}: {} inner iterations, change {:.3e}",
            r.outer_step,
            r.epsilon,
            r.inner_iterations,
            r.sup_change
        );
        last = Some((u1.to_vec(), u2.to_vec()));
    });
    manifest.run.timings.solve_seconds = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let (fields, history, status, code, failure): (Option<Fields>, Vec<StepRecord>, &str, i32, Option<Error>) =
        match result {
            Ok(sol) => {
                let (status, code) = if sol.converged {
                    ("converged", EXIT_OK)
                } else {
                    ("not_converged", EXIT_NOT_CONVERGED)
                };
                (Some((sol.u1, sol.u2)), sol.history, status, code, None)
            }
            Err(e) => {
                let history = match &e {
                    Error::LinearNonConvergence { history, .. } | Error::Divergence { history, .. } => history.clone(),
                    _ => Vec::new(),
                };
                let code = exit_code(&e);
                let status = if code == EXIT_NOT_CONVERGED { "not_converged" } else { "failed" };
                (last, history, status, code, Some(e))
            }
        };
    if let Some((u1, u2)) = &fields {
        export_field(u1, &mesh, &a.out.join("u1.csv"), FieldFormat::Csv)?;
        export_field(u2, &mesh, &a.out.join("u2.csv"), FieldFormat::Csv)?;
        if a.vtk {
            export_field(u1, &mesh, &a.out.join("u1.vtk"), FieldFormat::VtkLegacy)?;
            export_field(u2, &mesh, &a.out.join("u2.vtk"), FieldFormat::VtkLegacy)?;
        }
    } else {
        manifest.run.outputs.retain(|o| o == "history.csv");
    }
    write_text(&a.out.join("history.csv"), &history_csv(&history))?;
    manifest.run.timings.write_seconds = t2.elapsed().as_secs_f64();
    manifest.run.status = status.to_string();
    manifest.write(&a.out)?;
    if let Some(e) = failure {
        eprintln!("error: {e}");
    } else if code != EXIT_OK {
        eprintln!("warning: continuation stopped before reaching epsilon_min with a converged inner loop");
    }
    Ok(code)
}

/// A solved problem reloaded from a `solve` output directory.
pub struct LoadedSolution {
    pub manifest: RunManifest,
    pub mesh: TriMesh,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

pub fn load_solution(dir: &Path) -> Result<LoadedSolution> {
    let manifest = RunManifest::load(dir)?;
    let mesh = manifest.config.build_mesh()?;
    let read = |name: &str| -> Result<Vec<f64>> {
        let rows = read_field_csv(&dir.join(name))?;
        if rows.len() != mesh.n_vertices() {
            return Err(Error::Config(format!(
                "{name} has {} rows but the mesh has {} vertices",
                rows.len(),
                mesh.n_vertices()
            )));
        }
        for ((p, _), v) in rows.iter().zip(&mesh.vertices) {
            if (p[0] - v[0]).abs() > 1e-12 || (p[1] - v[1]).abs() > 1e-12 {
                return Err(Error::Config(format!("{name} does not match the mesh near ({}, {})", v[0], v[1])));
            }
        }
        Ok(rows.into_iter().map(|(_, u)| u).collect())
    };
    let u1 = read("u1.csv")?;
    let u2 = read("u2.csv")?;
    Ok(LoadedSolution { manifest, mesh, u1, u2 })
}

#[derive(Debug, Serialize)]
struct TraceSummary {
    start: Point,
    mode: usize,
    points: usize,
    arc_length: f64,
    reached_target: bool,
    step_size: f64,
    line_integrals: Vec<LineIntegral>,
}

#[derive(Debug, Serialize)]
struct LineIntegral {
    field: String,
    value: f64,
}

fn cmd_trace(a: &TraceArgs) -> Result<i32> {
    let sol = load_solution(&a.solution)?;
    let start = [a.x, a.y];
    if !sol.mesh.contains(start) {
        return Err(Error::OutOfDomain { x: a.x, y: a.y });
    }
    let (mode, u, target) = match a.mode {
        ModeArg::One => (1, &sol.u1, sol.mesh.goal_vertices()),
        ModeArg::Two => (2, &sol.u2, sol.mesh.depot_vertices()),
    };
    let step = a.step.unwrap_or(0.5 * sol.mesh.mesh_size());
    let mut tr = trace_trajectory(u, &sol.mesh, start, step, &target, a.max_steps)?;
    let coeffs = &sol.manifest.config.problem.coefficients;
    for (name, field) in coeffs.named() {
        tr.integrate(name, field)?;
    }
    write_text(&a.solution.join("trajectory.csv"), &tr.to_csv())?;
    let summary = TraceSummary {
        start,
        mode,
        points: tr.points.len(),
        arc_length: tr.arc_length,
        reached_target: tr.reached_goal,
        step_size: tr.step_size,
        line_integrals: tr
            .line_integrals
            .iter()
            .map(|(field, value)| LineIntegral {
                field: field.clone(),
                value: *value,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_text(&a.solution.join("trajectory_summary.json"), &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(EXIT_OK)
}

fn cmd_mc(a: &McArgs) -> Result<i32> {
    let sol = load_solution(&a.solution)?;
    if sol.manifest.run.status != "converged" {
        return Err(Error::Simulation(format!(
            "solution in {} has status `{}`",
            a.solution.display(),
            sol.manifest.run.status
        )));
    }
    let mut cfg = sol.manifest.config.mc;
    if let Some(n) = a.n {
        cfg.n_samples = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.dt.is_some() {
        cfg.dt = a.dt;
    }
    if let Some(t) = a.max_time {
        cfg.max_time = t;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    let x0 = [a.x, a.y];
    let est: McEstimate = simulate_cost_of(&sol.u1, &sol.u2, &sol.manifest.config.problem, &sol.mesh, x0, &cfg)?;
    if a.header {
        println!("{}", McEstimate::CSV_HEADER);
    }
    println!("{}", est.csv_row(x0));
    Ok(EXIT_OK)
}

fn cmd_aubry(a: &AubryArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(r) = a.refine {
        cfg.mesh.refine = r;
    }
    let mesh = cfg.build_mesh()?;
    let report = aubry_set(&cfg.problem, &mesh, a.tol)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if report.is_empty { EXIT_OK } else { EXIT_NEGATIVE })
}

fn cmd_verify_1d(a: &Verify1dArgs) -> Result<i32> {
    let selector = match a.candidate {
        CandidateArg::Smooth => CandidateSelector::Smooth,
        CandidateArg::Min => CandidateSelector::Min(a.c),
        CandidateArg::Max => CandidateSelector::Max(a.c),
        CandidateArg::Perturbed => CandidateSelector::Perturbed,
    };
    let candidate = selector.build()?;
    let report = check_viscosity(&candidate, &default_rhs, a.grid, a.tol)?
        .with_conditions(check_boundary(&candidate, &a.conditions, a.tol));
    println!("{}", report.to_json());
    Ok(if report.overall == Verdict::IsSolution {
        EXIT_OK
    } else {
        EXIT_NEGATIVE
    })
}
