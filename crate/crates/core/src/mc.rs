//! Monte Carlo estimate of the mode-1 expected cost under the descent policy
//! of a computed pair of value functions.
//!
//! Each sample starts in mode 1 and moves along `−∇u_m` at speed `f_m`.
//! Mode 1 accrues `K1 + λR` per unit time and breaks down to mode 2 at rate
//! `φ1`; the trip ends when the goal is reached. Mode 2 accrues `K2` per unit
//! time; at rate `φ2`, or upon reaching the depot, the repair cost `R` is paid
//! and the vehicle returns to mode 1 where it stands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::SolutionPair;
use crate::mesh::{PointLocator, TriMesh};
use crate::model::{dist, ProblemSpec, Region};
use crate::postprocess::STAGNATION_FLOOR;
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Time step; `None` picks `h / (2 max f)`.
    pub dt: Option<f64>,
    /// Samples still running at this time are censored.
    pub max_time: f64,
    /// Capture radius for the goal and depot; `None` uses the resolved disc
    /// radius of each region (or the mesh size for vertex-list regions).
    pub capture_radius: Option<f64>,
    pub threads: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_samples: 10_000,
            seed: 0,
            dt: None,
            max_time: 200.0,
            capture_radius: None,
            threads: 1,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Parameter("n_samples must be at least 1".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.max_time > 0.0) {
            return Err(Error::Parameter(format!("max_time must be positive, got {}", self.max_time)));
        }
        if let Some(r) = self.capture_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Parameter(format!("capture radius must be positive, got {r}")));
            }
        }
        if self.threads == 0 {
            return Err(Error::Parameter("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// `h / (2 max f)` with the maximum taken over mesh vertices and both modes.
pub fn default_time_step(mesh: &TriMesh, spec: &ProblemSpec) -> Result<f64> {
    let mut fmax = 0.0f64;
    for &p in &mesh.vertices {
        let s = spec.sample(p)?;
        fmax = fmax.max(s.f[0]).max(s.f[1]);
    }
    if !(fmax > 0.0) {
        return Err(Error::Simulation("speeds vanish on the whole mesh".into()));
    }
    Ok(mesh.mesh_size() / (2.0 * fmax))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Mean over uncensored samples.
    pub mean: f64,
    /// Sample standard deviation over uncensored samples divided by the
    /// square root of their number.
    pub standard_error: f64,
    pub n_samples: usize,
    pub n_uncensored: usize,
    pub censored_fraction: f64,
    pub dt: f64,
}

impl McEstimate {
    pub const CSV_HEADER: &'static str = "x0,y0,mean,se,n,censored_fraction";

    pub fn csv_row(&self, x0: Point) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            x0[0], x0[1], self.mean, self.standard_error, self.n_samples, self.censored_fraction
        )
    }
}

/// Simulates the switching process from `x0` under the policy of `sol`.
pub fn simulate_cost(sol: &SolutionPair, spec: &ProblemSpec, mesh: &TriMesh, x0: Point, cfg: &McConfig) -> Result<McEstimate> {
    if !sol.converged {
        return Err(Error::Simulation("the solution did not converge".into()));
    }
    simulate_cost_of(&sol.u1, &sol.u2, spec, mesh, x0, cfg)
}

/// As [`simulate_cost`], for value functions given as nodal vectors.
pub fn simulate_cost_of(
    u1: &[f64],
    u2: &[f64],
    spec: &ProblemSpec,
    mesh: &TriMesh,
    x0: Point,
    cfg: &McConfig,
) -> Result<McEstimate> {
    cfg.validate()?;
    for u in [u1, u2] {
        if u.len() != mesh.n_vertices() {
            return Err(Error::Parameter(format!(
                "field has {} values for {} vertices",
                u.len(),
                mesh.n_vertices()
            )));
        }
    }
    if !mesh.contains(x0) {
        return Err(Error::OutOfDomain { x: x0[0], y: x0[1] });
    }
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => default_time_step(mesh, spec)?,
    };
    let sim = Simulator::new(u1, u2, spec, mesh, cfg, dt);
    if sim.goal.captures(x0) {
        return Ok(McEstimate {
            mean: 0.0,
            standard_error: 0.0,
            n_samples: cfg.n_samples,
            n_uncensored: cfg.n_samples,
            censored_fraction: 0.0,
            dt,
        });
    }
    if sim.direction(0, x0).is_none() {
        return Err(Error::Simulation(format!(
            "the mode-1 gradient vanishes at the start point ({}, {})",
            x0[0], x0[1]
        )));
    }

    let run = |i: usize| sim.sample(x0, i as u64);
    let outcomes: Vec<Result<Option<f64>>> = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Simulation(format!("thread pool: {e}")))?;
        pool.install(|| (0..cfg.n_samples).into_par_iter().map(run).collect())
    } else {
        (0..cfg.n_samples).map(run).collect()
    };

    // Sequential reduction in sample order keeps the estimate independent of
    // the thread count.
    let mut costs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if let Some(c) = o? {
            costs.push(c);
        }
    }
    let n_used = costs.len();
    let censored_fraction = (cfg.n_samples - n_used) as f64 / cfg.n_samples as f64;
    if n_used == 0 {
        return Err(Error::Simulation(format!(
            "all {} samples were censored at max_time = {}",
            cfg.n_samples, cfg.max_time
        )));
    }
    let mean = costs.iter().sum::<f64>() / n_used as f64;
    let standard_error = if n_used > 1 {
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n_used - 1) as f64;
        (var / n_used as f64).sqrt()
    } else {
        0.0
    };
    if censored_fraction > 0.0 {
        log::warn!("{:.2}% of Monte Carlo samples were censored", 100.0 * censored_fraction);
    }
    Ok(McEstimate {
        mean,
        standard_error,
        n_samples: cfg.n_samples,
        n_uncensored: n_used,
        censored_fraction,
        dt,
    })
}

struct Capture {
    center: Point,
    radius: f64,
}

impl Capture {
    fn new(region: &Region, mesh: &TriMesh, radius: Option<f64>) -> Self {
        let resolved = region.resolved(mesh.mesh_size());
        let default = match resolved {
            Region::Disc { radius: Some(r), .. } => r,
            _ => mesh.mesh_size(),
        };
        Capture {
            center: region.anchor(mesh),
            radius: radius.unwrap_or(default),
        }
    }

    fn captures(&self, p: Point) -> bool {
        dist(p, self.center) <= self.radius
    }
}

struct Simulator<'a> {
    spec: &'a ProblemSpec,
    mesh: &'a TriMesh,
    locator: PointLocator,
    /// Unit descent directions per element and mode (`None` where flat).
    directions: [Vec<Option<Point>>; 2],
    goal: Capture,
    depot: Capture,
    dt: f64,
    max_steps: usize,
    seed: u64,
}

impl<'a> Simulator<'a> {
    fn new(u1: &[f64], u2: &[f64], spec: &'a ProblemSpec, mesh: &'a TriMesh, cfg: &McConfig, dt: f64) -> Self {
        let dirs = |u: &[f64]| -> Vec<Option<Point>> {
            (0..mesh.n_triangles())
                .map(|t| {
                    let g = mesh.gradient(u, t);
                    let n = g[0].hypot(g[1]);
                    (n >= STAGNATION_FLOOR).then(|| [-g[0] / n, -g[1] / n])
                })
                .collect()
        };
        Simulator {
            spec,
            mesh,
            locator: PointLocator::new(mesh),
            directions: [dirs(u1), dirs(u2)],
            goal: Capture::new(&spec.goal, mesh, cfg.capture_radius),
            depot: Capture::new(&spec.depot, mesh, cfg.capture_radius),
            dt,
            max_steps: (cfg.max_time / dt).ceil() as usize,
            seed: cfg.seed,
        }
    }

    fn direction(&self, mode: usize, p: Point) -> Option<Point> {
        let t = self.locator.locate(self.mesh, p)?;
        self.directions[mode][t]
    }

    /// Cost of sample `index`, or `None` if it was censored.
    fn sample(&self, x0: Point, index: u64) -> Result<Option<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let dt = self.dt;
        let mut p = x0;
        let mut mode = 0usize;
        let mut cost = 0.0;
        for _ in 0..self.max_steps {
            let c = self.spec.sample(p)?;
            if mode == 0 {
                cost += (c.k[0] + c.lambda * c.repair) * dt;
            } else {
                cost += c.k[1] * dt;
            }
            if let Some(d) = self.direction(mode, p) {
                let v = c.f[mode] * dt;
                p = self.mesh.clamp([p[0] + v * d[0], p[1] + v * d[1]]);
            }
            if mode == 0 {
                if self.goal.captures(p) {
                    return Ok(Some(cost));
                }
                let switch = 1.0 - (-c.phi[0] * dt).exp();
                if rng.gen::<f64>() < switch {
                    mode = 1;
                }
            } else {
                let switch = 1.0 - (-c.phi[1] * dt).exp();
                if self.depot.captures(p) || rng.gen::<f64>() < switch {
                    cost += self.spec.sample(p)?.repair;
                    mode = 0;
                    if self.goal.captures(p) {
                        return Ok(Some(cost));
                    }
                }
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::problem_mesh;
    use crate::model::CoefficientField;

    fn distance_field(mesh: &TriMesh, g: Point) -> Vec<f64> {
        mesh.vertices.iter().map(|&v| dist(v, g)).collect()
    }

    fn cfg(n: usize) -> McConfig {
        McConfig {
            n_samples: n,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn decoupled_case_is_deterministic_transport() {
        let spec = ProblemSpec::distance_benchmark();
        let mesh = problem_mesh(&spec, 2, 1, 5).unwrap();
        let d = distance_field(&mesh, [1.9, 0.5]);
        let est = simulate_cost_of(&d, &d, &spec, &mesh, [0.9, 0.5], &cfg(20)).unwrap();
        let r = 1.5 * mesh.mesh_size();
        assert!((est.mean - (1.0 - r)).abs() <= est.dt + 1e-9, "{est:?}");
        assert_eq!(est.standard_error, 0.0);
        assert_eq!(est.censored_fraction, 0.0);
    }

    #[test]
    fn running_rate_is_k1_plus_lambda_r() {
        let mut spec = ProblemSpec::distance_benchmark();
        spec.coefficients.k1 = CoefficientField::constant(2.0);
        spec.coefficients.lambda = CoefficientField::constant(0.5);
        spec.coefficients.repair = CoefficientField::constant(1.0);
        let mesh = problem_mesh(&spec, 2, 1, 5).unwrap();
        let d = distance_field(&mesh, [1.9, 0.5]);
        let est = simulate_cost_of(&d, &d, &spec, &mesh, [0.9, 0.5], &cfg(5)).unwrap();
        let travel = 1.0 - 1.5 * mesh.mesh_size();
        assert!((est.mean - 2.5 * travel).abs() <= 2.5 * est.dt + 1e-9, "{est:?}");
    }

    #[test]
    fn start_inside_goal_costs_nothing() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 4).unwrap();
        let d = distance_field(&mesh, [1.9, 0.5]);
        let est = simulate_cost_of(&d, &d, &spec, &mesh, [1.9, 0.5], &cfg(10)).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn flat_start_is_an_error() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 3).unwrap();
        let z = vec![0.0; mesh.n_vertices()];
        assert!(matches!(
            simulate_cost_of(&z, &z, &spec, &mesh, [0.5, 0.5], &cfg(10)),
            Err(Error::Simulation(_))
        ));
        assert!(matches!(
            simulate_cost_of(&z, &z, &spec, &mesh, [5.0, 0.5], &cfg(10)),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(simulate_cost_of(&z, &z, &spec, &mesh, [0.5, 0.5], &cfg(0)).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible_and_thread_independent() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 4).unwrap();
        let d = distance_field(&mesh, [1.9, 0.5]);
        let a = simulate_cost_of(&d, &d, &spec, &mesh, [0.5, 0.5], &cfg(300)).unwrap();
        let b = simulate_cost_of(&d, &d, &spec, &mesh, [0.5, 0.5], &cfg(300)).unwrap();
        let par = McConfig { threads: 4, ..cfg(300) };
        let c = simulate_cost_of(&d, &d, &spec, &mesh, [0.5, 0.5], &par).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.standard_error.to_bits(), b.standard_error.to_bits());
        assert_eq!(a.mean.to_bits(), c.mean.to_bits());
        assert!(a.standard_error > 0.0);
    }

    #[test]
    fn disjoint_seeds_agree_statistically() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 4).unwrap();
        let d = distance_field(&mesh, [1.9, 0.5]);
        let a = simulate_cost_of(&d, &d, &spec, &mesh, [0.5, 0.5], &McConfig { seed: 1, ..cfg(400) }).unwrap();
        let b = simulate_cost_of(&d, &d, &spec, &mesh, [0.5, 0.5], &McConfig { seed: 2, ..cfg(400) }).unwrap();
        assert_ne!(a.mean, b.mean);
        let pooled = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() <= 4.0 * pooled, "{a:?} {b:?}");
    }

    #[test]
    fn censoring_is_counted() {
        let spec = ProblemSpec::distance_benchmark();
        let mesh = problem_mesh(&spec, 2, 1, 4).unwrap();
        let d = distance_field(&mesh, [1.9, 0.5]);
        let short = McConfig { max_time: 0.1, ..cfg(5) };
        assert!(matches!(
            simulate_cost_of(&d, &d, &spec, &mesh, [0.1, 0.5], &short),
            Err(Error::Simulation(_))
        ));
    }

    #[test]
    fn csv_row_has_six_fields() {
        let e = McEstimate {
            mean: 1.0,
            standard_error: 0.1,
            n_samples: 10,
            n_uncensored: 9,
            censored_fraction: 0.1,
            dt: 0.01,
        };
        assert_eq!(e.csv_row([0.5, 0.5]).split(',').count(), 6);
        assert_eq!(McEstimate::CSV_HEADER.split(',').count(), 6);
    }
}
