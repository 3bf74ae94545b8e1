//! Viscosity-solution checks for the one-dimensional weakly coupled system
//!
//! ```text
//! |u1'| + u1 − u2 = F    on (−1, 1)
//! |u2'| + u2 − u1 = F    on (−1, 1)
//! ```
//!
//! with `u_i(±1) = 0`, for candidates that are piecewise quadratic.
//!
//! A kink where the derivative jumps downward can only be touched from above
//! by smooth test functions, so the subsolution inequality is checked for
//! every slope in the superdifferential; an upward jump is checked against
//! the supersolution inequality over the subdifferential.

use serde::Serialize;

use crate::{Error, Result};

/// Continuity tolerance at piece boundaries.
pub const CONTINUITY_TOL: f64 = 1e-12;
/// Number of test slopes sampled across each kink.
pub const KINK_SLOPES: usize = 21;

/// `a x² + b x + c` on `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub coeffs: [f64; 3],
    pub label: String,
}

impl Piece {
    pub fn new(start: f64, end: f64, coeffs: [f64; 3], label: &str) -> Self {
        Piece {
            start,
            end,
            coeffs,
            label: label.to_string(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let [a, b, c] = self.coeffs;
        (a * x + b) * x + c
    }

    pub fn slope(&self, x: f64) -> f64 {
        2.0 * self.coeffs[0] * x + self.coeffs[1]
    }
}

/// A continuous piecewise-quadratic function on `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseQuadratic {
    pub pieces: Vec<Piece>,
}

impl PiecewiseQuadratic {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        let first = pieces
            .first()
            .ok_or_else(|| Error::InvalidCandidate("a component needs at least one piece".into()))?;
        if first.start != -1.0 || pieces.last().map(|p| p.end) != Some(1.0) {
            return Err(Error::InvalidCandidate("pieces must start at -1 and end at 1".into()));
        }
        for p in &pieces {
            if !(p.start < p.end) || p.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidCandidate(format!(
                    "bad piece '{}' on [{}, {}]",
                    p.label, p.start, p.end
                )));
            }
        }
        for w in pieces.windows(2) {
            if w[0].end != w[1].start {
                return Err(Error::InvalidCandidate(format!(
                    "pieces do not tile: gap between {} and {}",
                    w[0].end, w[1].start
                )));
            }
            let x = w[0].end;
            let jump = (w[0].value(x) - w[1].value(x)).abs();
            if jump > CONTINUITY_TOL {
                return Err(Error::InvalidCandidate(format!("discontinuity of {jump:e} at x = {x}")));
            }
        }
        Ok(PiecewiseQuadratic { pieces })
    }

    fn piece_at(&self, x: f64) -> &Piece {
        self.pieces
            .iter()
            .find(|p| x <= p.end)
            .unwrap_or_else(|| self.pieces.last().expect("nonempty"))
    }

    pub fn value(&self, x: f64) -> f64 {
        self.piece_at(x).value(x)
    }

    /// One-sided derivatives `(u'(x−), u'(x+))` at a piece boundary `i`.
    fn one_sided(&self, i: usize) -> (f64, f64) {
        let x = self.pieces[i].end;
        (self.pieces[i].slope(x), self.pieces[i + 1].slope(x))
    }

    /// Interior piece boundaries where the one-sided derivatives differ.
    pub fn kinks(&self) -> Vec<f64> {
        (0..self.pieces.len() - 1)
            .filter(|&i| {
                let (l, r) = self.one_sided(i);
                (l - r).abs() > CONTINUITY_TOL
            })
            .map(|i| self.pieces[i].end)
            .collect()
    }

    fn is_kink(&self, x: f64) -> bool {
        self.kinks().iter().any(|&k| (k - x).abs() <= 1e-12)
    }

    /// Classical derivative away from kinks.
    pub fn slope(&self, x: f64) -> f64 {
        self.piece_at(x).slope(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate1D {
    pub name: String,
    pub u: [PiecewiseQuadratic; 2],
}

/// Named members of the candidate families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateSelector {
    /// `1 − x²`.
    Smooth,
    /// `min{1 − x², x² − C}`.
    Min(f64),
    /// `max{1 − x², x² − C}`.
    Max(f64),
    /// `1 − x²` raised by 0.1 on `|x| ≤ 0.4` with linear ramps down to zero at `|x| = 0.5`.
    Perturbed,
}

impl CandidateSelector {
    pub fn build(self) -> Result<Candidate1D> {
        match self {
            CandidateSelector::Smooth => Ok(smooth_candidate()),
            CandidateSelector::Min(c) => example_candidate(c),
            CandidateSelector::Max(c) => max_candidate(c),
            CandidateSelector::Perturbed => Ok(perturbed_candidate()),
        }
    }
}

impl Candidate1D {
    /// Both components equal to `u`.
    pub fn symmetric(name: &str, pieces: Vec<Piece>) -> Result<Self> {
        let u = PiecewiseQuadratic::new(pieces)?;
        Ok(Candidate1D {
            name: name.to_string(),
            u: [u.clone(), u],
        })
    }

    pub fn value(&self, i: usize, x: f64) -> f64 {
        self.u[i].value(x)
    }
}

const ONE_MINUS_SQUARE: [f64; 3] = [-1.0, 0.0, 1.0];

pub fn smooth_candidate() -> Candidate1D {
    Candidate1D::symmetric("1-x^2", vec![Piece::new(-1.0, 1.0, ONE_MINUS_SQUARE, "1-x^2")])
        .expect("a single smooth piece is valid")
}

fn check_c(c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Parameter(format!("C must lie in (0, 1), got {c}")));
    }
    Ok(((1.0 + c) / 2.0).sqrt())
}

/// `u1 = u2 = min{1 − x², x² − C}`, with kinks at `±√((1 + C)/2)`.
pub fn example_candidate(c: f64) -> Result<Candidate1D> {
    let k = check_c(c)?;
    let inner = [1.0, 0.0, -c];
    Candidate1D::symmetric(
        &format!("min(1-x^2, x^2-{c})"),
        vec![
            Piece::new(-1.0, -k, ONE_MINUS_SQUARE, "1-x^2"),
            Piece::new(-k, k, inner, "x^2-C"),
            Piece::new(k, 1.0, ONE_MINUS_SQUARE, "1-x^2"),
        ],
    )
}

/// `u1 = u2 = max{1 − x², x² − C}`.
pub fn max_candidate(c: f64) -> Result<Candidate1D> {
    let k = check_c(c)?;
    let outer = [1.0, 0.0, -c];
    Candidate1D::symmetric(
        &format!("max(1-x^2, x^2-{c})"),
        vec![
            Piece::new(-1.0, -k, outer, "x^2-C"),
            Piece::new(-k, k, ONE_MINUS_SQUARE, "1-x^2"),
            Piece::new(k, 1.0, outer, "x^2-C"),
        ],
    )
}

pub fn perturbed_candidate() -> Candidate1D {
    Candidate1D::symmetric(
        "1-x^2 + bump",
        vec![
            Piece::new(-1.0, -0.5, ONE_MINUS_SQUARE, "1-x^2"),
            Piece::new(-0.5, -0.4, [-1.0, 1.0, 1.5], "ramp up"),
            Piece::new(-0.4, 0.4, [-1.0, 0.0, 1.1], "1.1-x^2"),
            Piece::new(0.4, 0.5, [-1.0, -1.0, 1.5], "ramp down"),
            Piece::new(0.5, 1.0, ONE_MINUS_SQUARE, "1-x^2"),
        ],
    )
    .expect("ramps are continuous by construction")
}

/// The right-hand side `2|x|`.
pub fn default_rhs(x: f64) -> f64 {
    2.0 * x.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KinkKind {
    /// Derivative jumps downward; the subsolution test applies.
    Concave,
    /// Derivative jumps upward; the supersolution test applies.
    Convex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KinkVerdict {
    pub component: usize,
    pub x: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    pub kind: KinkKind,
    /// Largest violation of the applicable inequality over the test slopes.
    pub worst_violation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub x: f64,
    pub expected: f64,
    pub values: [f64; 2],
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    IsSolution,
    FailsEquation,
    FailsBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViscosityReport {
    pub candidate: String,
    pub tolerance: f64,
    pub smooth_point_max_residual: f64,
    pub kinks: Vec<KinkVerdict>,
    /// `u_i(±1) = 0` followed by any extra conditions.
    pub boundary: Vec<ConditionVerdict>,
    pub overall: Verdict,
}

impl ViscosityReport {
    /// Adds interior conditions and recomputes the overall verdict.
    pub fn with_conditions(mut self, extra: Vec<ConditionVerdict>) -> Self {
        self.boundary.extend(extra);
        self.overall = overall(self.smooth_point_max_residual, self.tolerance, &self.kinks, &self.boundary);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn overall(residual: f64, tol: f64, kinks: &[KinkVerdict], boundary: &[ConditionVerdict]) -> Verdict {
    if residual > tol || kinks.iter().any(|k| !k.pass) {
        Verdict::FailsEquation
    } else if boundary.iter().any(|b| !b.pass) {
        Verdict::FailsBoundary
    } else {
        Verdict::IsSolution
    }
}

/// Checks `c` against the system with right-hand side `f` on a uniform grid
/// of `grid_n` intervals, at every kink, and at `x = ±1`.
pub fn check_viscosity(c: &Candidate1D, f: &dyn Fn(f64) -> f64, grid_n: usize, tol: f64) -> Result<ViscosityReport> {
    if grid_n < 100 {
        return Err(Error::Parameter(format!("grid_n must be at least 100, got {grid_n}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let mut residual = 0.0f64;
    for k in 0..=grid_n {
        let x = -1.0 + 2.0 * k as f64 / grid_n as f64;
        for i in 0..2 {
            if c.u[i].is_kink(x) {
                continue;
            }
            let r = c.u[i].slope(x).abs() + c.value(i, x) - c.value(1 - i, x) - f(x);
            residual = residual.max(r.abs());
        }
    }

    let mut kinks = Vec::new();
    for i in 0..2 {
        let u = &c.u[i];
        for b in 0..u.pieces.len() - 1 {
            let (left, right) = u.one_sided(b);
            if (left - right).abs() <= CONTINUITY_TOL {
                continue;
            }
            let x = u.pieces[b].end;
            let coupling = c.value(i, x) - c.value(1 - i, x);
            let kind = if right < left { KinkKind::Concave } else { KinkKind::Convex };
            let (lo, hi) = (left.min(right), left.max(right));
            let worst = (0..KINK_SLOPES)
                .map(|s| {
                    let p = lo + (hi - lo) * s as f64 / (KINK_SLOPES - 1) as f64;
                    let h = p.abs() + coupling;
                    match kind {
                        KinkKind::Concave => h - f(x),
                        KinkKind::Convex => f(x) - h,
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            kinks.push(KinkVerdict {
                component: i + 1,
                x,
                left_slope: left,
                right_slope: right,
                kind,
                worst_violation: worst.max(0.0),
                pass: worst <= tol,
            });
        }
    }
    kinks.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.component.cmp(&b.component)));

    let boundary = check_boundary(c, &[(-1.0, 0.0), (1.0, 0.0)], tol);
    let overall = overall(residual, tol, &kinks, &boundary);
    Ok(ViscosityReport {
        candidate: c.name.clone(),
        tolerance: tol,
        smooth_point_max_residual: residual,
        kinks,
        boundary,
        overall,
    })
}

/// Evaluates both components at each `(x, value)` condition. Points outside
/// `[−1, 1]` fail.
pub fn check_boundary(c: &Candidate1D, conditions: &[(f64, f64)], tol: f64) -> Vec<ConditionVerdict> {
    conditions
        .iter()
        .map(|&(x, expected)| {
            if !(-1.0..=1.0).contains(&x) {
                return ConditionVerdict {
                    x,
                    expected,
                    values: [f64::NAN; 2],
                    pass: false,
                };
            }
            let values = [c.value(0, x), c.value(1, x)];
            ConditionVerdict {
                x,
                expected,
                values,
                pass: values.iter().all(|v| (v - expected).abs() <= tol),
            }
        })
        .collect()
}

/// Family members satisfying every condition: the smooth candidate and the
/// min-candidates for `C = k / n_c`, `k = 1, …, n_c − 1`.
pub fn scan_family(conditions: &[(f64, f64)], tol: f64, n_c: usize) -> Result<Vec<Candidate1D>> {
    let mut members = vec![smooth_candidate()];
    for k in 1..n_c {
        members.push(example_candidate(k as f64 / n_c as f64)?);
    }
    Ok(members
        .into_iter()
        .filter(|m| check_boundary(m, conditions, tol).iter().all(|v| v.pass))
        .collect())
}
