//! Residuals, optimal trajectories and field export.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::continuation::SolutionPair;
use crate::mesh::{PointLocator, TriMesh};
use crate::model::{dist, CoefficientField, ProblemSpec};
use crate::{Error, Point, Result};

/// Gradients below this magnitude stop a trajectory.
pub const STAGNATION_FLOOR: f64 = 1e-10;

/// Per-element residuals `r_k = |∇u_k| f_k + φ_k (u_k − u_j) − rhs_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    /// Elements whose vertices are all interior and outside the goal and depot.
    pub interior: Vec<bool>,
    pub median: [f64; 2],
    pub max: [f64; 2],
    /// Median of `|r1|` and `|r2|` pooled over interior elements.
    pub combined_median: f64,
}

pub fn eikonal_residual(sol: &SolutionPair, spec: &ProblemSpec, mesh: &TriMesh) -> Result<ResidualField> {
    eikonal_residual_of(&sol.u1, &sol.u2, spec, mesh)
}

pub fn eikonal_residual_of(u1: &[f64], u2: &[f64], spec: &ProblemSpec, mesh: &TriMesh) -> Result<ResidualField> {
    let nt = mesh.n_triangles();
    let mut r = [Vec::with_capacity(nt), Vec::with_capacity(nt)];
    let mut interior = Vec::with_capacity(nt);
    let u = [u1, u2];
    for t in 0..nt {
        let s = spec.sample(mesh.centroid(t))?;
        let tri = mesh.triangles[t];
        let avg = |v: &[f64]| (v[tri[0]] + v[tri[1]] + v[tri[2]]) / 3.0;
        let mean = [avg(u1), avg(u2)];
        for k in 0..2 {
            let g = mesh.gradient(u[k], t);
            let j = 1 - k;
            r[k].push(g[0].hypot(g[1]) * s.f[k] + s.phi[k] * (mean[k] - mean[j]) - s.rhs(k));
        }
        interior.push(tri.iter().all(|&v| {
            let m = mesh.markers[v];
            m.is_interior() && !m.in_goal && !m.in_depot
        }));
    }
    let [r1, r2] = r;
    let pick = |v: &[f64]| -> Vec<f64> { v.iter().zip(&interior).filter(|(_, &i)| i).map(|(x, _)| x.abs()).collect() };
    let (a1, a2) = (pick(&r1), pick(&r2));
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mut pooled = a1.clone();
    pooled.extend_from_slice(&a2);
    Ok(ResidualField {
        median: [median(a1.clone()), median(a2.clone())],
        max: [max(&a1), max(&a2)],
        combined_median: median(pooled),
        r1,
        r2,
        interior,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gradient-descent path of a value function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub points: Vec<Point>,
    pub arc_length: f64,
    pub reached_goal: bool,
    pub step_size: f64,
    /// `(field name, ∫ field ds)` for any fields integrated with [`Trajectory::integrate`].
    pub line_integrals: Vec<(String, f64)>,
}

impl Trajectory {
    pub fn integrate(&mut self, name: &str, field: &CoefficientField) -> Result<f64> {
        let v = polyline_integral(&self.points, field)?;
        self.line_integrals.push((name.to_string(), v));
        Ok(v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.16e},{:.16e}", p[0], p[1]);
        }
        s
    }
}

/// Piecewise Simpson rule along a polyline.
pub fn polyline_integral(points: &[Point], field: &CoefficientField) -> Result<f64> {
    let mut total = 0.0;
    for w in points.windows(2) {
        total += segment_simpson(field, w[0], w[1])?;
    }
    Ok(total)
}

fn segment_simpson(field: &CoefficientField, a: Point, b: Point) -> Result<f64> {
    let len = dist(a, b);
    if len == 0.0 {
        return Ok(0.0);
    }
    let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    Ok(len / 6.0 * (field.eval(a)? + 4.0 * field.eval(m)? + field.eval(b)?))
}

/// `∫ field ds` along the straight segment `a → b`, split into `n` pieces.
pub fn segment_line_integral(field: &CoefficientField, a: Point, b: Point, n: usize) -> Result<f64> {
    let n = n.max(1);
    let pts: Vec<Point> = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
        })
        .collect();
    polyline_integral(&pts, field)
}

/// Follows `−∇u` from `start` with explicit midpoint steps of length `step`.
pub fn trace_trajectory(
    u: &[f64],
    mesh: &TriMesh,
    start: Point,
    step: f64,
    target: &[usize],
    max_steps: usize,
) -> Result<Trajectory> {
    if u.len() != mesh.n_vertices() {
        return Err(Error::Parameter(format!(
            "field has {} values for {} vertices",
            u.len(),
            mesh.n_vertices()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {step}")));
    }
    if !mesh.contains(start) {
        return Err(Error::OutOfDomain { x: start[0], y: start[1] });
    }
    let locator = PointLocator::new(mesh);
    let near_target = |p: Point| target.iter().any(|&v| dist(mesh.vertices[v], p) <= step);
    let descent = |p: Point| -> Option<Point> {
        let t = locator.locate(mesh, p)?;
        let g = mesh.gradient(u, t);
        let n = g[0].hypot(g[1]);
        (n >= STAGNATION_FLOOR).then(|| [-g[0] / n, -g[1] / n])
    };
    let mut p = mesh.clamp(start);
    let mut points = vec![p];
    let mut arc_length = 0.0;
    let mut reached_goal = near_target(p);
    while !reached_goal && points.len() <= max_steps {
        let Some(d1) = descent(p) else { break };
        let mid = mesh.clamp([p[0] + 0.5 * step * d1[0], p[1] + 0.5 * step * d1[1]]);
        let Some(d2) = descent(mid) else { break };
        let next = mesh.clamp([p[0] + step * d2[0], p[1] + step * d2[1]]);
        let moved = dist(p, next);
        if moved <= 1e-3 * step {
            // pinned against the boundary
            break;
        }
        arc_length += moved;
        p = next;
        points.push(p);
        reached_goal = near_target(p);
    }
    Ok(Trajectory {
        points,
        arc_length,
        reached_goal,
        step_size: step,
        line_integrals: Vec::new(),
    })
}

/// Value of the P1 interpolant of `u` at `p`.
pub fn interpolate(u: &[f64], mesh: &TriMesh, locator: &PointLocator, p: Point) -> Result<f64> {
    let t = locator.locate(mesh, p).ok_or(Error::OutOfDomain { x: p[0], y: p[1] })?;
    let l = mesh.barycentric(t, mesh.clamp(p));
    let tri = mesh.triangles[t];
    Ok(l[0] * u[tri[0]] + l[1] * u[tri[1]] + l[2] * u[tri[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldFormat {
    Csv,
    VtkLegacy,
}

pub fn field_csv(u: &[f64], mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(64 * u.len() + 8);
    s.push_str("x,y,value\n");
    for (p, v) in mesh.vertices.iter().zip(u) {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", p[0], p[1], v);
    }
    s
}

pub fn export_field(u: &[f64], mesh: &TriMesh, path: &Path, format: FieldFormat) -> Result<()> {
    if u.len() != mesh.n_vertices() {
        return Err(Error::Parameter(format!(
            "field has {} values for {} vertices",
            u.len(),
            mesh.n_vertices()
        )));
    }
    let text = match format {
        FieldFormat::Csv => field_csv(u, mesh),
        FieldFormat::VtkLegacy => mesh.vtk_string(Some(("value", u))),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads `x,y,value` rows written by [`export_field`].
pub fn read_field_csv(path: &Path) -> Result<Vec<(Point, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field_csv(&text).map_err(|msg| Error::Config(format!("{}: {msg}", path.display())))
}

pub fn parse_field_csv(text: &str) -> std::result::Result<Vec<(Point, f64)>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some("x,y,value") => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 3 {
                return Err(format!("line {}: expected 3 columns", i + 2));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            Ok(([num(cols[0])?, num(cols[1])?], num(cols[2])?))
        })
        .collect()
}
