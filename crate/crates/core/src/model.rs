//! Problem data: coefficient fields, domain geometry, goal and depot regions.

use serde::{Deserialize, Serialize};

use crate::mesh::TriMesh;
use crate::{Error, Point, Result};

/// Points this far outside a grid are clamped back onto it.
const CLAMP_TOL: f64 = 1e-12;

/// A scalar coefficient field over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum CoefficientField {
    Constant {
        value: f64,
    },
    /// `amplitude * exp(-decay[0] (x - cx)^2 - decay[1] (y - cy)^2)`
    GaussianBump {
        amplitude: f64,
        center: Point,
        decay: [f64; 2],
    },
    /// Vertex values on a structured `nx × ny` grid over `[0, length] × [0, width]`,
    /// interpolated linearly on the lower-left to upper-right diagonal split of each cell.
    /// Vertex `(i, j)` is stored at `j * (nx + 1) + i`.
    NodalGrid {
        length: f64,
        width: f64,
        nx: usize,
        ny: usize,
        values: Vec<f64>,
    },
}

impl CoefficientField {
    pub fn constant(value: f64) -> Self {
        CoefficientField::Constant { value }
    }

    pub fn gaussian_bump(amplitude: f64, center: Point, decay: [f64; 2]) -> Self {
        CoefficientField::GaussianBump {
            amplitude,
            center,
            decay,
        }
    }

    pub fn eval(&self, p: Point) -> Result<f64> {
        match self {
            CoefficientField::Constant { value } => Ok(*value),
            CoefficientField::GaussianBump {
                amplitude,
                center,
                decay,
            } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                Ok(amplitude * (-decay[0] * dx * dx - decay[1] * dy * dy).exp())
            }
            CoefficientField::NodalGrid {
                length,
                width,
                nx,
                ny,
                values,
            } => eval_nodal_grid(*length, *width, *nx, *ny, values, p),
        }
    }

    /// Returns `true` for fields that are the same value everywhere.
    pub fn is_constant(&self) -> bool {
        matches!(self, CoefficientField::Constant { .. })
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self {
            CoefficientField::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidSpec(format!("{name}: constant value is not finite")))
            }
            CoefficientField::GaussianBump {
                amplitude,
                center,
                decay,
            } if !(amplitude.is_finite()
                && center.iter().chain(decay).all(|v| v.is_finite())) =>
            {
                Err(Error::InvalidSpec(format!("{name}: gaussian-bump parameters must be finite")))
            }
            CoefficientField::NodalGrid {
                length,
                width,
                nx,
                ny,
                values,
            } => {
                if *nx == 0 || *ny == 0 || !(*length > 0.0) || !(*width > 0.0) {
                    return Err(Error::InvalidSpec(format!("{name}: degenerate nodal grid")));
                }
                if values.len() != (nx + 1) * (ny + 1) {
                    return Err(Error::InvalidSpec(format!(
                        "{name}: nodal grid expects {} values, got {}",
                        (nx + 1) * (ny + 1),
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec(format!("{name}: nodal grid has non-finite values")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn eval_nodal_grid(
    length: f64,
    width: f64,
    nx: usize,
    ny: usize,
    values: &[f64],
    p: Point,
) -> Result<f64> {
    let outside = |v: f64, hi: f64| v < -CLAMP_TOL * hi.max(1.0) || v > hi + CLAMP_TOL * hi.max(1.0);
    if outside(p[0], length) || outside(p[1], width) || !p[0].is_finite() || !p[1].is_finite() {
        return Err(Error::OutOfDomain { x: p[0], y: p[1] });
    }
    let sx = (p[0].clamp(0.0, length) / length) * nx as f64;
    let sy = (p[1].clamp(0.0, width) / width) * ny as f64;
    let i = (sx.floor() as usize).min(nx - 1);
    let j = (sy.floor() as usize).min(ny - 1);
    let s = sx - i as f64;
    let t = sy - j as f64;
    let at = |i: usize, j: usize| values[j * (nx + 1) + i];
    let (v00, v10, v01, v11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
    Ok(if s >= t {
        v00 + s * (v10 - v00) + t * (v11 - v10)
    } else {
        v00 + t * (v01 - v00) + s * (v11 - v01)
    })
}

/// Evaluates `field` at each point.
pub fn eval_field(field: &CoefficientField, points: &[Point]) -> Result<Vec<f64>> {
    points.iter().map(|&p| field.eval(p)).collect()
}

/// Goal or depot region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    /// All vertices within `radius` of `center`. A missing radius resolves to
    /// 1.5 times the mesh size when the region is marked.
    Disc {
        center: Point,
        #[serde(default)]
        radius: Option<f64>,
    },
    /// Explicit vertex indices of the computational mesh.
    Vertices { vertices: Vec<usize> },
}

impl Region {
    pub fn disc(center: Point, radius: f64) -> Self {
        Region::Disc {
            center,
            radius: Some(radius),
        }
    }

    /// A point target, resolved to a disc of 1.5 mesh sizes.
    pub fn point(center: Point) -> Self {
        Region::Disc {
            center,
            radius: None,
        }
    }

    /// Materializes a default disc radius from the mesh size `h`.
    pub fn resolved(&self, h: f64) -> Region {
        match self {
            Region::Disc { center, radius: None } => Region::disc(*center, DEFAULT_RADIUS_FACTOR * h),
            other => other.clone(),
        }
    }

    /// Vertices of `mesh` that belong to the region.
    pub fn vertex_set(&self, mesh: &TriMesh) -> Result<Vec<usize>> {
        match self.resolved(mesh.mesh_size()) {
            Region::Disc {
                center,
                radius: Some(r),
            } => Ok(mesh
                .vertices
                .iter()
                .enumerate()
                .filter(|(_, v)| dist(**v, center) <= r * (1.0 + 1e-12))
                .map(|(i, _)| i)
                .collect()),
            Region::Vertices { vertices } => {
                if let Some(&bad) = vertices.iter().find(|&&v| v >= mesh.vertices.len()) {
                    return Err(Error::InvalidSpec(format!(
                        "region vertex {bad} out of range ({} vertices)",
                        mesh.vertices.len()
                    )));
                }
                let mut v = vertices.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
            Region::Disc { radius: None, .. } => unreachable!("resolved above"),
        }
    }

    /// A representative point: the disc center, or the centroid of the listed vertices.
    pub fn anchor(&self, mesh: &TriMesh) -> Point {
        match self {
            Region::Disc { center, .. } => *center,
            Region::Vertices { vertices } => {
                let n = vertices.len().max(1) as f64;
                let s = vertices
                    .iter()
                    .filter_map(|&v| mesh.vertices.get(v))
                    .fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
                [s[0] / n, s[1] / n]
            }
        }
    }
}

pub const DEFAULT_RADIUS_FACTOR: f64 = 1.5;

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "S")]
    pub width: f64,
}

/// The eight model coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub f1: CoefficientField,
    pub f2: CoefficientField,
    #[serde(rename = "K1")]
    pub k1: CoefficientField,
    #[serde(rename = "K2")]
    pub k2: CoefficientField,
    pub lambda: CoefficientField,
    pub phi1: CoefficientField,
    pub phi2: CoefficientField,
    #[serde(rename = "R")]
    pub repair: CoefficientField,
}

impl Coefficients {
    pub fn named(&self) -> [(&'static str, &CoefficientField); 8] {
        [
            ("f1", &self.f1),
            ("f2", &self.f2),
            ("K1", &self.k1),
            ("K2", &self.k2),
            ("lambda", &self.lambda),
            ("phi1", &self.phi1),
            ("phi2", &self.phi2),
            ("R", &self.repair),
        ]
    }

    pub fn by_name(&self, name: &str) -> Option<&CoefficientField> {
        self.named()
            .into_iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, f)| f)
    }
}

/// All coefficients evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSample {
    pub f: [f64; 2],
    pub k: [f64; 2],
    pub lambda: f64,
    pub phi: [f64; 2],
    pub repair: f64,
}

impl CoefficientSample {
    /// Right-hand side of equation `mode` (0 or 1): `K1 + λR` or `K2 + φ2 R`.
    pub fn rhs(&self, mode: usize) -> f64 {
        match mode {
            0 => self.k[0] + self.lambda * self.repair,
            _ => self.k[1] + self.phi[1] * self.repair,
        }
    }

    pub fn is_finite(&self) -> std::result::Result<(), &'static str> {
        let named = [
            ("f1", self.f[0]),
            ("f2", self.f[1]),
            ("K1", self.k[0]),
            ("K2", self.k[1]),
            ("lambda", self.lambda),
            ("phi1", self.phi[0]),
            ("phi2", self.phi[1]),
            ("R", self.repair),
        ];
        match named.iter().find(|(_, v)| !v.is_finite()) {
            Some((n, _)) => Err(n),
            None => Ok(()),
        }
    }
}

fn default_speed_floor() -> f64 {
    1e-3
}

/// A complete path-planning problem on `Ω = [0, L] × [0, S]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub coefficients: Coefficients,
    pub goal: Region,
    pub depot: Region,
    /// Lower bound enforced on both speeds at every mesh vertex.
    #[serde(default = "default_speed_floor")]
    pub speed_floor: f64,
}

impl ProblemSpec {
    /// Road scenario with a breakdown hot spot near a pair of disabled
    /// vehicles at (1, 0); goal and depot coincide at (1.9, 0.5).
    pub fn road_scenario() -> Self {
        let c = CoefficientField::constant;
        ProblemSpec {
            domain: Domain {
                length: 2.0,
                width: 1.0,
            },
            coefficients: Coefficients {
                f1: c(1.0),
                f2: c(0.2),
                k1: c(1.0),
                k2: c(1.0),
                lambda: c(1.0),
                phi1: CoefficientField::gaussian_bump(7.0, [1.0, 0.0], [5.0, 5.0]),
                phi2: c(3.0),
                repair: c(1.0),
            },
            goal: Region::point([1.9, 0.5]),
            depot: Region::point([1.9, 0.5]),
            speed_floor: default_speed_floor(),
        }
    }

    /// Decoupled unit-speed problem whose mode-1 value function is the
    /// Euclidean distance to the goal.
    pub fn distance_benchmark() -> Self {
        let c = CoefficientField::constant;
        ProblemSpec {
            domain: Domain {
                length: 2.0,
                width: 1.0,
            },
            coefficients: Coefficients {
                f1: c(1.0),
                f2: c(1.0),
                k1: c(1.0),
                k2: c(1.0),
                lambda: c(0.0),
                phi1: c(0.0),
                phi2: c(0.0),
                repair: c(0.0),
            },
            goal: Region::point([1.9, 0.5]),
            depot: Region::point([1.9, 0.5]),
            speed_floor: default_speed_floor(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sample(&self, p: Point) -> Result<CoefficientSample> {
        let c = &self.coefficients;
        Ok(CoefficientSample {
            f: [c.f1.eval(p)?, c.f2.eval(p)?],
            k: [c.k1.eval(p)?, c.k2.eval(p)?],
            lambda: c.lambda.eval(p)?,
            phi: [c.phi1.eval(p)?, c.phi2.eval(p)?],
            repair: c.repair.eval(p)?,
        })
    }

    pub fn region(&self, mode: usize) -> &Region {
        if mode == 0 {
            &self.goal
        } else {
            &self.depot
        }
    }

    /// Checks parameters that do not depend on a mesh.
    pub fn validate(&self) -> Result<()> {
        let d = self.domain;
        if !(d.length > 0.0 && d.length.is_finite()) || !(d.width > 0.0 && d.width.is_finite()) {
            return Err(Error::InvalidDomain(format!(
                "L and S must be positive, got L={}, S={}",
                d.length, d.width
            )));
        }
        if !(self.speed_floor > 0.0) {
            return Err(Error::InvalidSpec("speed_floor must be positive".into()));
        }
        for (name, f) in self.coefficients.named() {
            f.validate(name)?;
        }
        for (name, r) in [("goal", &self.goal), ("depot", &self.depot)] {
            if let Region::Disc { center, radius } = r {
                if !center.iter().all(|v| v.is_finite()) || radius.is_some_and(|r| !(r >= 0.0)) {
                    return Err(Error::InvalidSpec(format!("{name}: invalid disc")));
                }
            }
        }
        Ok(())
    }

    /// Checks the vertex-sampled sign conditions on `mesh`: all coefficients
    /// nonnegative and both speeds at least `speed_floor`. Zero coupling
    /// rates are accepted with a warning.
    pub fn validate_on_mesh(&self, mesh: &TriMesh) -> Result<()> {
        self.validate()?;
        for (name, field) in self.coefficients.named() {
            let values = eval_field(field, &mesh.vertices)?;
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || **v < 0.0)
            {
                return Err(Error::InvalidSpec(format!(
                    "{name} = {v} at vertex {i}; coefficients must be finite and nonnegative"
                )));
            }
            if name.starts_with('f') {
                if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v < self.speed_floor) {
                    return Err(Error::InvalidSpec(format!(
                        "{name} = {v} at vertex {i} is below speed_floor {}",
                        self.speed_floor
                    )));
                }
            }
            if name.starts_with("phi") && values.contains(&0.0) {
                log::warn!("{name} vanishes on part of the mesh; the modes decouple there");
            }
        }
        Ok(())
    }

    /// Copy with every default disc radius materialized for mesh size `h`.
    pub fn resolved(&self, h: f64) -> ProblemSpec {
        ProblemSpec {
            goal: self.goal.resolved(h),
            depot: self.depot.resolved(h),
            ..self.clone()
        }
    }
}

/// Vertex-sampled diagnostic of the Aubry set `{K1 + λR = 0} ∩ {K2 + φ2R = 0}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AubryReport {
    pub min1: f64,
    pub min2: f64,
    pub tolerance: f64,
    pub is_empty: bool,
    /// Vertices where either expression is at or below the tolerance.
    pub witnesses: Vec<usize>,
}

pub fn aubry_set(spec: &ProblemSpec, mesh: &TriMesh, tol: f64) -> Result<AubryReport> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("Aubry tolerance must be positive, got {tol}")));
    }
    let mut min1 = f64::INFINITY;
    let mut min2 = f64::INFINITY;
    let mut witnesses = Vec::new();
    for (i, &p) in mesh.vertices.iter().enumerate() {
        let s = spec.sample(p)?;
        let (e1, e2) = (s.rhs(0), s.rhs(1));
        min1 = min1.min(e1);
        min2 = min2.min(e2);
        if e1 <= tol || e2 <= tol {
            witnesses.push(i);
        }
    }
    Ok(AubryReport {
        min1,
        min2,
        tolerance: tol,
        is_empty: min1 > tol || min2 > tol,
        witnesses,
    })
}
