//! Vanishing-viscosity continuation with per-level relinearization.
//!
//! Starting from a reaction–diffusion solve with `β = 0`, each viscosity
//! level `ε_n = max(ε₀ rⁿ, ε_min)` repeats: normalize the previous gradients,
//! assemble, solve, until the relative sup-norm change drops below
//! `inner_tol` or `max_inner` relinearizations have been spent.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_forms_parallel, auto_grad_floor, compute_beta, BlockSystem, ElementGradientField,
    StabilizationParams,
};
use crate::mesh::TriMesh;
use crate::model::{aubry_set, ProblemSpec};
use crate::sparse::{solve_with, SolveStats, SolverMethod, SolverOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub epsilon0: f64,
    pub ratio: f64,
    /// Final viscosity; `None` means the mesh size.
    pub epsilon_min: Option<f64>,
    pub inner_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub theta: f64,
    /// Gradient regularization; `None` picks `1e-10 (max|u|/h + 1)` per step.
    pub grad_floor: Option<f64>,
    /// Keeps the `-ε(∇u·n, w)` boundary integral. Off by default: with it
    /// the diffusion operator loses its natural boundary condition and the
    /// early, diffusion-dominated levels become singular or unstable.
    pub include_paper_boundary_term: bool,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    pub linear_restart: usize,
    pub linear_method: SolverMethod,
    pub threads: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            epsilon0: 1.0,
            ratio: 0.5,
            epsilon_min: None,
            inner_tol: 1e-6,
            max_inner: 20,
            max_outer: 60,
            theta: 0.5,
            grad_floor: None,
            include_paper_boundary_term: false,
            linear_tol: 1e-10,
            linear_max_iter: 3000,
            linear_restart: 60,
            linear_method: SolverMethod::Auto,
            threads: 1,
        }
    }
}

impl ContinuationConfig {
    /// The explicit `epsilon_min`, or the mesh size capped at `epsilon0` so
    /// that very coarse meshes run a single level.
    pub fn resolved_epsilon_min(&self, mesh: &TriMesh) -> f64 {
        self.epsilon_min.unwrap_or_else(|| mesh.mesh_size().min(self.epsilon0))
    }

    /// Copy with `epsilon_min` materialized for `mesh`.
    pub fn resolved(&self, mesh: &TriMesh) -> ContinuationConfig {
        ContinuationConfig {
            epsilon_min: Some(self.resolved_epsilon_min(mesh)),
            ..self.clone()
        }
    }

    pub fn validate(&self, mesh: &TriMesh) -> Result<()> {
        let emin = self.resolved_epsilon_min(mesh);
        if !(emin > 0.0 && self.epsilon0 >= emin) {
            return Err(Error::Parameter(format!(
                "need epsilon0 >= epsilon_min > 0, got {} and {emin}",
                self.epsilon0
            )));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Parameter(format!("ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.max_inner == 0 || self.max_outer == 0 || !(self.inner_tol > 0.0) || !(self.linear_tol > 0.0) {
            return Err(Error::Parameter("max_inner, max_outer, inner_tol and linear_tol must be positive".into()));
        }
        if self.grad_floor.is_some_and(|g| !(g > 0.0)) || !(self.theta >= 0.0) {
            return Err(Error::Parameter("grad_floor must be positive and theta nonnegative".into()));
        }
        Ok(())
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.linear_tol,
            max_iter: self.linear_max_iter,
            restart: self.linear_restart,
            method: self.linear_method,
        }
    }

    /// The viscosity levels visited: `ε₀, ε₀r, …` clipped at `ε_min`, which is
    /// always the last level (unless `max_outer` cuts the sequence short).
    pub fn schedule(&self, mesh: &TriMesh) -> Vec<f64> {
        let emin = self.resolved_epsilon_min(mesh);
        let mut out = Vec::new();
        let mut eps = self.epsilon0;
        while out.len() < self.max_outer {
            let e = eps.max(emin);
            out.push(e);
            if e <= emin {
                break;
            }
            eps *= self.ratio;
        }
        out
    }
}

/// Bookkeeping for one viscosity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub outer_step: usize,
    pub epsilon: f64,
    pub inner_iterations: usize,
    /// Relative sup-norm change of the last relinearization.
    pub sup_change: f64,
    pub inner_converged: bool,
    /// Statistics of the last linear solve at this level.
    pub linear: SolveStats,
    pub linear_iterations_total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPair {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub final_epsilon: f64,
    pub history: Vec<StepRecord>,
    /// The smallest viscosity level was reached and its inner loop met `inner_tol`.
    pub converged: bool,
}

impl SolutionPair {
    /// Largest violation of `u1 = 0` on the goal and `u2 − u1 = R` on the depot.
    pub fn constraint_violation(&self, mesh: &TriMesh, spec: &ProblemSpec) -> Result<f64> {
        constraint_violation(&self.u1, &self.u2, mesh, spec)
    }
}

pub fn constraint_violation(u1: &[f64], u2: &[f64], mesh: &TriMesh, spec: &ProblemSpec) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, m) in mesh.markers.iter().enumerate() {
        if m.in_goal {
            worst = worst.max(u1[i].abs());
        }
        if m.in_depot {
            let r = spec.coefficients.repair.eval(mesh.vertices[i])?;
            worst = worst.max((u2[i] - u1[i] - r).abs());
        }
    }
    Ok(worst)
}

fn check_setup(mesh: &TriMesh, spec: &ProblemSpec, config: &ContinuationConfig) -> Result<()> {
    config.validate(mesh)?;
    spec.validate_on_mesh(mesh)?;
    if mesh.goal_vertices().is_empty() {
        return Err(Error::RegionResolution { region: "goal".into() });
    }
    if mesh.depot_vertices().is_empty() {
        return Err(Error::RegionResolution { region: "depot".into() });
    }
    Ok(())
}

fn split(x: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u1 = x;
    let u2 = u1.split_off(n);
    (u1, u2)
}

fn solve_system(system: &BlockSystem, guess: Option<&[f64]>, config: &ContinuationConfig) -> Result<(Vec<f64>, SolveStats)> {
    solve_with(&system.matrix, &system.rhs, guess, &config.solver_options())
}

fn stab_for(config: &ContinuationConfig, epsilon: f64, grad_floor: f64) -> StabilizationParams {
    StabilizationParams {
        theta: config.theta,
        epsilon,
        grad_floor,
        include_paper_boundary_term: config.include_paper_boundary_term,
    }
}

/// Solution of the `β = 0` system at `ε₀`: reaction–diffusion with all
/// constraints and no advection.
pub fn initial_guess(mesh: &TriMesh, spec: &ProblemSpec, config: &ContinuationConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    check_setup(mesh, spec, config)?;
    let (u1, u2, stats) = initial_solve(mesh, spec, config)?;
    if !stats.converged {
        return Err(Error::Initialization {
            residual: stats.final_relative_residual,
        });
    }
    Ok((u1, u2))
}

fn initial_solve(
    mesh: &TriMesh,
    spec: &ProblemSpec,
    config: &ContinuationConfig,
) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
    let zero = ElementGradientField::zero(mesh.n_triangles());
    let stab = stab_for(config, config.epsilon0, config.grad_floor.unwrap_or(1.0));
    let system = assemble_forms_parallel(mesh, spec, &zero, &zero, &stab, config.threads)?;
    let (x, stats) = solve_system(&system, None, config)?;
    let (mut u1, mut u2) = split(x, mesh.n_vertices());
    impose_constraints(&mut u1, &mut u2, mesh, spec)?;
    Ok((u1, u2, stats))
}

/// Snaps constrained nodal values onto their prescribed values. The solver
/// already satisfies these rows to `linear_tol`; this removes the residue.
fn impose_constraints(u1: &mut [f64], u2: &mut [f64], mesh: &TriMesh, spec: &ProblemSpec) -> Result<()> {
    for (i, m) in mesh.markers.iter().enumerate() {
        if m.in_goal {
            u1[i] = 0.0;
        }
    }
    for (i, m) in mesh.markers.iter().enumerate() {
        if m.in_depot {
            u2[i] = u1[i] + spec.coefficients.repair.eval(mesh.vertices[i])?;
        }
    }
    Ok(())
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn run_continuation(mesh: &TriMesh, spec: &ProblemSpec, config: &ContinuationConfig) -> Result<SolutionPair> {
    run_continuation_with(mesh, spec, config, |_, _, _| {})
}

/// Runs the continuation, calling `observer` with the record and iterate at
/// the end of every viscosity level.
pub fn run_continuation_with<F>(
    mesh: &TriMesh,
    spec: &ProblemSpec,
    config: &ContinuationConfig,
    mut observer: F,
) -> Result<SolutionPair>
where
    F: FnMut(&StepRecord, &[f64], &[f64]),
{
    check_setup(mesh, spec, config)?;
    let aubry = aubry_set(spec, mesh, 1e-8)?;
    if !aubry.is_empty {
        log::warn!(
            "Aubry set is not empty ({} witness vertices); the limit problem may lack uniqueness",
            aubry.witnesses.len()
        );
    }
    let h = mesh.mesh_size();
    let (mut u1, mut u2, stats) = initial_solve(mesh, spec, config)?;
    if !stats.converged {
        return Err(Error::Initialization {
            residual: stats.final_relative_residual,
        });
    }
    let schedule = config.schedule(mesh);
    let emin = config.resolved_epsilon_min(mesh);
    let mut history: Vec<StepRecord> = Vec::with_capacity(schedule.len());
    let mut guess: Vec<f64> = u1.iter().chain(&u2).copied().collect();
    for (outer_step, &epsilon) in schedule.iter().enumerate() {
        let mut record = StepRecord {
            outer_step,
            epsilon,
            inner_iterations: 0,
            sup_change: f64::INFINITY,
            inner_converged: false,
            linear: stats,
            linear_iterations_total: 0,
        };
        for inner in 0..config.max_inner {
            let floor1 = config.grad_floor.unwrap_or_else(|| auto_grad_floor(&u1, h));
            let floor2 = config.grad_floor.unwrap_or_else(|| auto_grad_floor(&u2, h));
            let beta1 = compute_beta(&u1, mesh, floor1);
            let beta2 = compute_beta(&u2, mesh, floor2);
            let stab = stab_for(config, epsilon, floor1.max(floor2));
            let system = assemble_forms_parallel(mesh, spec, &beta1, &beta2, &stab, config.threads)?;
            let (x, lin) = solve_system(&system, Some(&guess), config)?;
            record.linear = lin;
            record.linear_iterations_total += lin.iterations;
            record.inner_iterations = inner + 1;
            if !lin.converged {
                history.push(record);
                return Err(Error::LinearNonConvergence {
                    outer_step,
                    inner_iter: inner,
                    residual: lin.final_relative_residual,
                    history,
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                history.push(record);
                return Err(Error::Divergence { outer_step, history });
            }
            guess.copy_from_slice(&x);
            let (mut n1, mut n2) = split(x, mesh.n_vertices());
            impose_constraints(&mut n1, &mut n2, mesh, spec)?;
            let scale = sup_norm(&n1).max(sup_norm(&n2)).max(f64::MIN_POSITIVE);
            record.sup_change = sup_diff(&n1, &u1).max(sup_diff(&n2, &u2)) / scale;
            u1 = n1;
            u2 = n2;
            if record.sup_change <= config.inner_tol {
                record.inner_converged = true;
                break;
            }
        }
        log::info!(
            "eps = {:.4e}: {} relinearizations, change {:.3e}, {} linear iterations",
            epsilon,
            record.inner_iterations,
            record.sup_change,
            record.linear_iterations_total
        );
        observer(&record, &u1, &u2);
        history.push(record);
    }
    let last = history.last().expect("schedule is never empty");
    let converged = last.epsilon <= emin && last.inner_converged;
    Ok(SolutionPair {
        final_epsilon: last.epsilon,
        converged,
        u1,
        u2,
        history,
    })
}

/// History as CSV with columns
/// `outer_step,epsilon,inner_iters,sup_change,lin_iters,lin_residual`.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut s = String::from("outer_step,epsilon,inner_iters,sup_change,lin_iters,lin_residual\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:.16e},{},{:.16e},{},{:.16e}",
            r.outer_step,
            r.epsilon,
            r.inner_iterations,
            r.sup_change,
            r.linear_iterations_total,
            r.linear.final_relative_residual
        );
    }
    s
}
