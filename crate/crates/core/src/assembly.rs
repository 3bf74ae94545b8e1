//! Streamline-diffusion assembly of the coupled block system for one
//! linearization step.
//!
//! Unknowns `0..N` are the nodal values of `u1`, `N..2N` those of `u2`. For
//! each mode `k` and element `T` the test function is perturbed to
//! `w = v + τ β·∇v` with `τ = θ h_T ν` and `ν = (|β|² + 1)^{-1/2}`, giving
//!
//! ```text
//! (∇u, K ∇v) + (f β·∇u, v) + (φ_k u_k, w) − (φ_k u_j, w) − ε(∇u·n, w)_∂Ω = (rhs_k, w)
//! K = εI + τ f β βᵀ
//! ```
//!
//! Coefficients are frozen at element centroids. Rows of constrained
//! vertices are then replaced by `u1 = 0` on the goal and `u2 − u1 = R` on the depot.

use rayon::prelude::*;

use crate::mesh::TriMesh;
use crate::model::{CoefficientSample, ProblemSpec};
use crate::sparse::CsrMatrix;
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationParams {
    pub theta: f64,
    pub epsilon: f64,
    pub grad_floor: f64,
    pub include_paper_boundary_term: bool,
}

impl StabilizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0) || !(self.epsilon > 0.0) || !(self.grad_floor > 0.0) {
            return Err(Error::Parameter(format!(
                "need theta >= 0, epsilon > 0, grad_floor > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-element P1 gradients and their regularized normalization `β = g / (|g| + δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGradientField {
    pub gradients: Vec<Point>,
    pub directions: Vec<Point>,
}

impl ElementGradientField {
    /// `β = 0` on every element.
    pub fn zero(n_triangles: usize) -> Self {
        ElementGradientField {
            gradients: vec![[0.0, 0.0]; n_triangles],
            directions: vec![[0.0, 0.0]; n_triangles],
        }
    }
}

pub fn compute_beta(u_prev: &[f64], mesh: &TriMesh, grad_floor: f64) -> ElementGradientField {
    assert_eq!(u_prev.len(), mesh.n_vertices());
    let gradients: Vec<Point> = (0..mesh.n_triangles()).map(|t| mesh.gradient(u_prev, t)).collect();
    let directions = gradients
        .iter()
        .map(|g| {
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if n == 0.0 {
                [0.0, 0.0]
            } else {
                [g[0] / (n + grad_floor), g[1] / (n + grad_floor)]
            }
        })
        .collect();
    ElementGradientField {
        gradients,
        directions,
    }
}

/// Gradient regularization `δ = 1e-10 (max|u| / h + 1)`.
pub fn auto_grad_floor(u: &[f64], h: f64) -> f64 {
    let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-10 * (umax / h + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `u1 = 0` at a goal vertex.
    U1ZeroOnGoal,
    /// `u2 − u1 = R` at a depot vertex.
    U2LinkedOnDepot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    pub n_vertices: usize,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constrained_rows: Vec<(usize, ConstraintKind)>,
}

impl BlockSystem {
    pub fn is_constrained(&self) -> Vec<bool> {
        let mut mask = vec![false; 2 * self.n_vertices];
        for &(r, _) in &self.constrained_rows {
            mask[r] = true;
        }
        mask
    }
}

/// Local contributions of one element. Indices are `[mode][test][trial]`.
#[derive(Debug, Clone, Copy)]
struct ElementBlock {
    diag: [[[f64; 3]; 3]; 2],
    coupling: [[[f64; 3]; 3]; 2],
    load: [[f64; 3]; 2],
}

struct Context<'a> {
    mesh: &'a TriMesh,
    beta: [&'a ElementGradientField; 2],
    stab: StabilizationParams,
    // boundary edge indices grouped by triangle
    edge_offsets: Vec<usize>,
    edge_ids: Vec<usize>,
}

impl<'a> Context<'a> {
    fn new(mesh: &'a TriMesh, beta: [&'a ElementGradientField; 2], stab: StabilizationParams) -> Self {
        let mut edge_offsets = vec![0usize; mesh.n_triangles() + 1];
        for e in &mesh.boundary_edges {
            edge_offsets[e.triangle + 1] += 1;
        }
        for t in 0..mesh.n_triangles() {
            edge_offsets[t + 1] += edge_offsets[t];
        }
        let mut fill = edge_offsets.clone();
        let mut edge_ids = vec![0; mesh.boundary_edges.len()];
        for (i, e) in mesh.boundary_edges.iter().enumerate() {
            edge_ids[fill[e.triangle]] = i;
            fill[e.triangle] += 1;
        }
        Context {
            mesh,
            beta,
            stab,
            edge_offsets,
            edge_ids,
        }
    }

    fn element(&self, t: usize, s: &CoefficientSample) -> ElementBlock {
        let mesh = self.mesh;
        let area = mesh.area(t);
        let h = mesh.elem_h[t];
        let grads = mesh.basis_gradients(t);
        let tri = mesh.triangles[t];
        let eps = self.stab.epsilon;
        let mut out = ElementBlock {
            diag: [[[0.0; 3]; 3]; 2],
            coupling: [[[0.0; 3]; 3]; 2],
            load: [[0.0; 3]; 2],
        };
        for k in 0..2 {
            let beta = self.beta[k].directions[t];
            let f = s.f[k];
            let rate = s.phi[k];
            let nu = 1.0 / (beta[0] * beta[0] + beta[1] * beta[1] + 1.0).sqrt();
            let tau = self.stab.theta * h * nu;
            let bg = grads.map(|g| beta[0] * g[0] + beta[1] * g[1]);
            let sd = bg.map(|v| tau * v);
            let rhs = s.rhs(k);
            for i in 0..3 {
                for j in 0..3 {
                    let gij = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                    let mass = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                    let react = rate * (mass + sd[i] * area / 3.0);
                    out.diag[k][i][j] =
                        area * (eps * gij + tau * f * bg[j] * bg[i]) + f * bg[j] * area / 3.0 + react;
                    out.coupling[k][i][j] = -react;
                }
                out.load[k][i] = rhs * (area / 3.0 + sd[i] * area);
            }
            if self.stab.include_paper_boundary_term {
                for &e in &self.edge_ids[self.edge_offsets[t]..self.edge_offsets[t + 1]] {
                    let edge = &mesh.boundary_edges[e];
                    let n = edge.normal;
                    for i in 0..3 {
                        let on_edge = if tri[i] == edge.a || tri[i] == edge.b { 0.5 } else { 0.0 };
                        let test = edge.length * (on_edge + sd[i]);
                        for j in 0..3 {
                            let flux = grads[j][0] * n[0] + grads[j][1] * n[1];
                            out.diag[k][i][j] -= eps * flux * test;
                        }
                    }
                }
            }
        }
        out
    }
}

fn sample_element(spec: &ProblemSpec, mesh: &TriMesh, t: usize) -> Result<CoefficientSample> {
    let s = spec.sample(mesh.centroid(t)).map_err(|_| Error::Assembly {
        field: "coefficients".into(),
        element: t,
    })?;
    s.is_finite().map_err(|name| Error::Assembly {
        field: name.into(),
        element: t,
    })?;
    Ok(s)
}

/// Assembles the block system sequentially.
pub fn assemble_forms(
    mesh: &TriMesh,
    spec: &ProblemSpec,
    beta1: &ElementGradientField,
    beta2: &ElementGradientField,
    stab: &StabilizationParams,
) -> Result<BlockSystem> {
    check_inputs(mesh, beta1, beta2, stab)?;
    let ctx = Context::new(mesh, [beta1, beta2], *stab);
    let blocks = (0..mesh.n_triangles())
        .map(|t| sample_element(spec, mesh, t).map(|s| ctx.element(t, &s)))
        .collect::<Result<Vec<_>>>()?;
    finish(mesh, spec, &blocks)
}

/// Same as [`assemble_forms`] with the element loop on `threads` workers.
/// Local blocks are merged in element order, so the result is bitwise
/// identical to the sequential assembly.
pub fn assemble_forms_parallel(
    mesh: &TriMesh,
    spec: &ProblemSpec,
    beta1: &ElementGradientField,
    beta2: &ElementGradientField,
    stab: &StabilizationParams,
    threads: usize,
) -> Result<BlockSystem> {
    if threads <= 1 {
        return assemble_forms(mesh, spec, beta1, beta2, stab);
    }
    check_inputs(mesh, beta1, beta2, stab)?;
    let ctx = Context::new(mesh, [beta1, beta2], *stab);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let blocks = pool.install(|| {
        (0..mesh.n_triangles())
            .into_par_iter()
            .map(|t| sample_element(spec, mesh, t).map(|s| ctx.element(t, &s)))
            .collect::<Result<Vec<_>>>()
    })?;
    finish(mesh, spec, &blocks)
}

fn check_inputs(
    mesh: &TriMesh,
    beta1: &ElementGradientField,
    beta2: &ElementGradientField,
    stab: &StabilizationParams,
) -> Result<()> {
    stab.validate()?;
    let nt = mesh.n_triangles();
    if beta1.directions.len() != nt || beta2.directions.len() != nt {
        return Err(Error::Parameter(format!(
            "direction fields have {} / {} entries for {nt} elements",
            beta1.directions.len(),
            beta2.directions.len()
        )));
    }
    Ok(())
}

fn finish(mesh: &TriMesh, spec: &ProblemSpec, blocks: &[ElementBlock]) -> Result<BlockSystem> {
    let n = mesh.n_vertices();
    let mut constrained_rows = Vec::new();
    let mut mask = vec![false; 2 * n];
    for (i, m) in mesh.markers.iter().enumerate() {
        if m.in_goal {
            constrained_rows.push((i, ConstraintKind::U1ZeroOnGoal));
            mask[i] = true;
        }
    }
    for (i, m) in mesh.markers.iter().enumerate() {
        if m.in_depot {
            constrained_rows.push((n + i, ConstraintKind::U2LinkedOnDepot));
            mask[n + i] = true;
        }
    }
    let mut triplets = Vec::with_capacity(blocks.len() * 36 + 2 * constrained_rows.len());
    let mut rhs = vec![0.0; 2 * n];
    for (t, b) in blocks.iter().enumerate() {
        let tri = mesh.triangles[t];
        for k in 0..2 {
            let own = k * n;
            let other = (1 - k) * n;
            for i in 0..3 {
                let row = own + tri[i];
                if mask[row] {
                    continue;
                }
                for j in 0..3 {
                    triplets.push((row, own + tri[j], b.diag[k][i][j]));
                    triplets.push((row, other + tri[j], b.coupling[k][i][j]));
                }
                rhs[row] += b.load[k][i];
            }
        }
    }
    for &(row, kind) in &constrained_rows {
        match kind {
            ConstraintKind::U1ZeroOnGoal => {
                triplets.push((row, row, 1.0));
                rhs[row] = 0.0;
            }
            ConstraintKind::U2LinkedOnDepot => {
                let v = row - n;
                let r = spec
                    .coefficients
                    .repair
                    .eval(mesh.vertices[v])
                    .ok()
                    .filter(|r| r.is_finite())
                    .ok_or_else(|| Error::Assembly {
                        field: "R".into(),
                        element: v,
                    })?;
                triplets.push((row, row, 1.0));
                triplets.push((row, v, -1.0));
                rhs[row] = r;
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(2 * n, 2 * n, &triplets)?;
    Ok(BlockSystem {
        n_vertices: n,
        matrix,
        rhs,
        constrained_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rectangle_mesh, problem_mesh, refined_rectangle};
    use crate::model::CoefficientField;

    fn zero_spec() -> ProblemSpec {
        let mut spec = ProblemSpec::distance_benchmark();
        let z = CoefficientField::constant(0.0);
        let c = &mut spec.coefficients;
        c.f1 = z.clone();
        c.f2 = z.clone();
        c.k1 = z.clone();
        c.k2 = z.clone();
        spec
    }

    fn stab(theta: f64, eps: f64, boundary: bool) -> StabilizationParams {
        StabilizationParams {
            theta,
            epsilon: eps,
            grad_floor: 1e-12,
            include_paper_boundary_term: boundary,
        }
    }

    /// Independent P1 stiffness on one triangle from the cotangent formula.
    fn cotangent_stiffness(p: [Point; 3]) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            let (j, l) = ((i + 1) % 3, (i + 2) % 3);
            // angle at vertex i is opposite edge (j, l)
            let u = [p[j][0] - p[i][0], p[j][1] - p[i][1]];
            let v = [p[l][0] - p[i][0], p[l][1] - p[i][1]];
            let cot = (u[0] * v[0] + u[1] * v[1]) / (u[0] * v[1] - u[1] * v[0]);
            k[j][l] -= 0.5 * cot;
            k[l][j] -= 0.5 * cot;
            k[j][j] += 0.5 * cot;
            k[l][l] += 0.5 * cot;
        }
        k
    }

    #[test]
    fn single_triangle_reduces_to_laplacian() {
        let mesh = TriMesh::from_triangles(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let spec = zero_spec();
        let b = ElementGradientField::zero(1);
        let sys = assemble_forms(&mesh, &spec, &b, &b, &stab(0.0, 1.0, false)).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let cot = cotangent_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((sys.matrix.get(i, j) - expect[i][j]).abs() < 1e-14);
                assert!((sys.matrix.get(3 + i, 3 + j) - expect[i][j]).abs() < 1e-14);
                assert!((cot[i][j] - expect[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn streamline_matrix_and_nu() {
        // β = (1,0), f = 1: the streamline term is τ (∂x u, ∂x v) with τ = θ h / √2
        let beta = [1.0f64, 0.0];
        let nu = 1.0 / (beta[0] * beta[0] + beta[1] * beta[1] + 1.0).sqrt();
        assert!((nu - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let mesh = TriMesh::from_triangles(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let mut spec = zero_spec();
        spec.coefficients.f1 = CoefficientField::constant(1.0);
        let field = ElementGradientField {
            gradients: vec![beta],
            directions: vec![beta],
        };
        let z = ElementGradientField::zero(1);
        let eps = 1e-3;
        let sys = assemble_forms(&mesh, &spec, &field, &z, &stab(1.0, eps, false)).unwrap();
        let h = 2f64.sqrt();
        let tau = h * nu;
        let gx = [-1.0, 1.0, 0.0];
        let lap = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                // area 1/2; advection (∂x φ_j, φ_i) = ∂x φ_j · area / 3
                let want = eps * lap[i][j] + 0.5 * tau * gx[i] * gx[j] + gx[j] / 6.0;
                assert!((sys.matrix.get(i, j) - want).abs() < 1e-14, "{i} {j}");
            }
        }
    }

    #[test]
    fn beta_examples() {
        let mesh = refined_rectangle(2.0, 1.0, 2, 1, 2).unwrap();
        let ux: Vec<f64> = mesh.vertices.iter().map(|v| v[0]).collect();
        let b = compute_beta(&ux, &mesh, 1e-10);
        for (g, d) in b.gradients.iter().zip(&b.directions) {
            assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
            assert!((d[0] - 1.0).abs() < 1e-9 && d[1].abs() < 1e-12);
        }
        let c = compute_beta(&vec![3.0; mesh.n_vertices()], &mesh, 1e-10);
        assert!(c.directions.iter().all(|d| *d == [0.0, 0.0]));
        let u: Vec<f64> = mesh.vertices.iter().map(|v| 3.0 * v[0] + 4.0 * v[1]).collect();
        let b = compute_beta(&u, &mesh, 1e-300);
        for d in &b.directions {
            assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_magnitude_bounds() {
        let mesh = refined_rectangle(2.0, 1.0, 2, 1, 3).unwrap();
        let u: Vec<f64> = mesh.vertices.iter().map(|v| (3.0 * v[0]).sin() * v[1] * v[1]).collect();
        let floor = 1e-3;
        let b = compute_beta(&u, &mesh, floor);
        for (g, d) in b.gradients.iter().zip(&b.directions) {
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let dn = (d[0] * d[0] + d[1] * d[1]).sqrt();
            assert!(dn <= 1.0);
            if gn > 0.0 {
                assert!(dn >= 1.0 - floor / (gn + floor) - 1e-15);
            }
        }
    }

    #[test]
    fn pure_diffusion_blocks_are_scaled_stiffness() {
        let mesh = refined_rectangle(2.0, 1.0, 2, 1, 3).unwrap();
        let spec = zero_spec();
        let z = ElementGradientField::zero(mesh.n_triangles());
        let eps = 0.37;
        let sys = assemble_forms(&mesh, &spec, &z, &z, &stab(0.0, eps, false)).unwrap();
        let n = mesh.n_vertices();
        // independent assembly from the cotangent formula
        let mut k = vec![vec![0.0; n]; n];
        for tri in &mesh.triangles {
            let local = cotangent_stiffness(tri.map(|i| mesh.vertices[i]));
            for i in 0..3 {
                for j in 0..3 {
                    k[tri[i]][tri[j]] += eps * local[i][j];
                }
            }
        }
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let a = sys.matrix.get(i, j);
                assert!((a - k[i][j]).abs() < 1e-12);
                assert_eq!(a, sys.matrix.get(j, i));
                assert_eq!(sys.matrix.get(n + i, n + j), a);
                row_sum += a;
            }
            assert!(row_sum.abs() < 1e-12);
        }
    }

    #[test]
    fn coupling_blocks_are_nonpositive() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 3).unwrap();
        let z = ElementGradientField::zero(mesh.n_triangles());
        let sys = assemble_forms(&mesh, &spec, &z, &z, &stab(0.0, 0.1, true)).unwrap();
        let n = mesh.n_vertices();
        let mask = sys.is_constrained();
        for row in 0..2 * n {
            if mask[row] {
                continue;
            }
            let (cols, vals) = sys.matrix.row(row);
            for (&c, &v) in cols.iter().zip(vals) {
                if (row < n) != (c < n) {
                    assert!(v <= 0.0, "row {row} col {c}: {v}");
                }
            }
        }
    }

    #[test]
    fn constraint_rows_are_exact() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 4).unwrap();
        let u: Vec<f64> = mesh.vertices.iter().map(|v| v[0] - v[1]).collect();
        let b = compute_beta(&u, &mesh, 1e-10);
        let sys = assemble_forms(&mesh, &spec, &b, &b, &stab(0.5, 0.05, true)).unwrap();
        let n = mesh.n_vertices();
        let goal = mesh.goal_vertices();
        let depot = mesh.depot_vertices();
        assert_eq!(sys.constrained_rows.len(), goal.len() + depot.len());
        for &i in &goal {
            let (cols, vals) = sys.matrix.row(i);
            assert_eq!((cols, vals), (&[i][..], &[1.0][..]));
            assert_eq!(sys.rhs[i], 0.0);
        }
        for &i in &depot {
            let (cols, vals) = sys.matrix.row(n + i);
            assert_eq!(cols, &[i, n + i][..]);
            assert_eq!(vals, &[-1.0, 1.0][..]);
            assert_eq!(sys.rhs[n + i], 1.0);
        }
    }

    #[test]
    fn symmetric_configuration_gives_equal_blocks() {
        let mut spec = ProblemSpec::road_scenario();
        let c = &mut spec.coefficients;
        c.f2 = c.f1.clone();
        c.k2 = c.k1.clone();
        c.phi1 = CoefficientField::constant(1.0);
        c.phi2 = CoefficientField::constant(1.0);
        // λR = φ2 R
        c.lambda = CoefficientField::constant(1.0);
        c.repair = CoefficientField::constant(0.5);
        spec.depot = spec.goal.clone();
        let mesh = problem_mesh(&spec, 2, 1, 3).unwrap();
        let u: Vec<f64> = mesh.vertices.iter().map(|v| (v[0] - 1.9).hypot(v[1] - 0.5)).collect();
        let b = compute_beta(&u, &mesh, 1e-10);
        let sys = assemble_forms(&mesh, &spec, &b, &b, &stab(0.5, 0.05, true)).unwrap();
        let n = mesh.n_vertices();
        let mask = sys.is_constrained();
        for i in (0..n).filter(|&i| !mask[i]) {
            for j in 0..n {
                assert_eq!(sys.matrix.get(i, j), sys.matrix.get(n + i, n + j));
                assert_eq!(sys.matrix.get(i, n + j), sys.matrix.get(n + i, j));
            }
            assert_eq!(sys.rhs[i], sys.rhs[n + i]);
        }
    }

    #[test]
    fn assembly_is_deterministic_and_parallel_matches() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 4).unwrap();
        let u: Vec<f64> = mesh.vertices.iter().map(|v| v[0] * v[0] + v[1]).collect();
        let b = compute_beta(&u, &mesh, 1e-10);
        let s = stab(0.5, 0.02, true);
        let a1 = assemble_forms(&mesh, &spec, &b, &b, &s).unwrap();
        let a2 = assemble_forms(&mesh, &spec, &b, &b, &s).unwrap();
        let a3 = assemble_forms_parallel(&mesh, &spec, &b, &b, &s, 4).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(a1, a3);
    }

    #[test]
    fn boundary_term_annihilates_linear_functions() {
        // with the retained boundary flux, ε(∇u,∇v) − ε(∇u·n, v)_∂Ω vanishes for linear u
        let mesh = build_rectangle_mesh(2.0, 1.0, 6, 3).unwrap();
        let spec = zero_spec();
        let z = ElementGradientField::zero(mesh.n_triangles());
        let on = assemble_forms(&mesh, &spec, &z, &z, &stab(0.0, 1.0, true)).unwrap();
        let off = assemble_forms(&mesh, &spec, &z, &z, &stab(0.0, 1.0, false)).unwrap();
        let n = mesh.n_vertices();
        let mut u = vec![0.0; 2 * n];
        for (i, v) in mesh.vertices.iter().enumerate() {
            u[i] = 2.0 * v[0] - v[1];
            u[n + i] = v[1];
        }
        let r_on = on.matrix.matvec(&u);
        let r_off = off.matrix.matvec(&u);
        assert!(r_on.iter().all(|v| v.abs() < 1e-12));
        assert!(r_off.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = ProblemSpec::road_scenario();
        let mesh = problem_mesh(&spec, 2, 1, 2).unwrap();
        let z = ElementGradientField::zero(3);
        assert!(assemble_forms(&mesh, &spec, &z, &z, &stab(0.5, 0.1, true)).is_err());
        let z = ElementGradientField::zero(mesh.n_triangles());
        assert!(assemble_forms(&mesh, &spec, &z, &z, &stab(0.5, 0.0, true)).is_err());
        let mut bad = spec.clone();
        bad.coefficients.k1 = CoefficientField::constant(f64::NAN);
        match assemble_forms(&mesh, &bad, &z, &z, &stab(0.5, 0.1, true)) {
            Err(Error::Assembly { field, element }) => {
                assert_eq!(field, "K1");
                assert_eq!(element, 0);
            }
            other => panic!("{other:?}"),
        }
    }
}
