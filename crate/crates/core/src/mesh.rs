//! Structured triangulations of the rectangle, uniform refinement and
//! goal/depot marking.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::model::ProblemSpec;
use crate::{Error, Point, Result};

/// Per-vertex flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VertexMarker {
    pub outer_boundary: bool,
    pub in_goal: bool,
    pub in_depot: bool,
}

impl VertexMarker {
    pub fn is_interior(&self) -> bool {
        !self.outer_boundary
    }
}

/// Edge on `∂Ω`, oriented as in its (unique) triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub triangle: usize,
    /// Outward unit normal.
    pub normal: Point,
    pub length: f64,
}

/// Conforming triangulation of `[0, L] × [0, S]` with counterclockwise triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub length: f64,
    pub width: f64,
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub markers: Vec<VertexMarker>,
    /// Longest edge of each triangle.
    pub elem_h: Vec<f64>,
    pub refinement_level: u32,
}

pub fn build_rectangle_mesh(length: f64, width: f64, nx: usize, ny: usize) -> Result<TriMesh> {
    if !(length > 0.0 && length.is_finite() && width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidDomain(format!(
            "rectangle needs positive extents, got {length} x {width}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidDomain(format!("need at least one cell per direction, got {nx} x {ny}")));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // the last row/column hit the extents exactly
            let x = if i == nx { length } else { length * i as f64 / nx as f64 };
            let y = if j == ny { width } else { width * j as f64 / ny as f64 };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = j * (nx + 1) + i;
            let v10 = v00 + 1;
            let v01 = v00 + nx + 1;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Ok(TriMesh::from_parts(length, width, vertices, triangles, 0))
}

/// Splits every triangle into four through its edge midpoints. Coarse vertices
/// keep their indices; their region markers are carried over.
pub fn refine_uniform(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let (pa, pb) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for &[a, b, c] in &mesh.triangles {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    let mut fine = TriMesh::from_parts(
        mesh.length,
        mesh.width,
        vertices,
        triangles,
        mesh.refinement_level + 1,
    );
    for (m, old) in fine.markers.iter_mut().zip(&mesh.markers) {
        m.in_goal = old.in_goal;
        m.in_depot = old.in_depot;
    }
    fine
}

/// Base `nx × ny` rectangle refined `levels` times.
pub fn refined_rectangle(length: f64, width: f64, nx: usize, ny: usize, levels: u32) -> Result<TriMesh> {
    let mut mesh = build_rectangle_mesh(length, width, nx, ny)?;
    for _ in 0..levels {
        mesh = refine_uniform(&mesh);
    }
    Ok(mesh)
}

/// Marks goal and depot vertices.
pub fn mark_regions(mesh: &TriMesh, spec: &ProblemSpec) -> Result<TriMesh> {
    let goal = spec.goal.vertex_set(mesh)?;
    let depot = spec.depot.vertex_set(mesh)?;
    for (name, set) in [("goal", &goal), ("depot", &depot)] {
        if set.is_empty() {
            return Err(Error::RegionResolution { region: name.into() });
        }
    }
    let mut out = mesh.clone();
    for m in &mut out.markers {
        m.in_goal = false;
        m.in_depot = false;
    }
    for &v in &goal {
        out.markers[v].in_goal = true;
    }
    for &v in &depot {
        out.markers[v].in_depot = true;
    }
    Ok(out)
}

impl TriMesh {
    /// Mesh from explicit vertices and counterclockwise triangles; the
    /// extents are taken from the bounding box of the vertices.
    pub fn from_triangles(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<TriMesh> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::InvalidDomain("empty mesh".into()));
        }
        if triangles.iter().flatten().any(|&i| i >= vertices.len()) {
            return Err(Error::InvalidDomain("triangle references a missing vertex".into()));
        }
        let length = vertices.iter().fold(0.0f64, |m, v| m.max(v[0]));
        let width = vertices.iter().fold(0.0f64, |m, v| m.max(v[1]));
        let mesh = TriMesh::from_parts(length, width, vertices, triangles, 0);
        if let Some(t) = (0..mesh.n_triangles()).find(|&t| mesh.double_area(t) <= 0.0) {
            return Err(Error::InvalidDomain(format!("triangle {t} is not counterclockwise")));
        }
        Ok(mesh)
    }

    fn from_parts(
        length: f64,
        width: f64,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        refinement_level: u32,
    ) -> TriMesh {
        let elem_h = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i]);
                crate::model::dist(a, b)
                    .max(crate::model::dist(b, c))
                    .max(crate::model::dist(c, a))
            })
            .collect();
        let boundary_edges = find_boundary_edges(&vertices, &triangles);
        let mut markers = vec![VertexMarker::default(); vertices.len()];
        for e in &boundary_edges {
            markers[e.a].outer_boundary = true;
            markers[e.b].outer_boundary = true;
        }
        TriMesh {
            length,
            width,
            vertices,
            triangles,
            boundary_edges,
            markers,
            elem_h,
            refinement_level,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Largest element diameter (longest edge).
    pub fn mesh_size(&self) -> f64 {
        self.elem_h.iter().copied().fold(0.0, f64::max)
    }

    /// Twice the signed area of triangle `t`.
    pub fn double_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.double_area(t)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradients of the three P1 basis functions of triangle `t`.
    pub fn basis_gradients(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let d = self.double_area(t);
        [
            [(b[1] - c[1]) / d, (c[0] - b[0]) / d],
            [(c[1] - a[1]) / d, (a[0] - c[0]) / d],
            [(a[1] - b[1]) / d, (b[0] - a[0]) / d],
        ]
    }

    /// Constant gradient of the P1 interpolant of `u` on triangle `t`.
    pub fn gradient(&self, u: &[f64], t: usize) -> Point {
        let g = self.basis_gradients(t);
        let tri = self.triangles[t];
        let mut out = [0.0, 0.0];
        for k in 0..3 {
            out[0] += u[tri[k]] * g[k][0];
            out[1] += u[tri[k]] * g[k][1];
        }
        out
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let d = self.double_area(t);
        let l0 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / d;
        let l1 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / d;
        [l0, l1, 1.0 - l0 - l1]
    }

    pub fn contains(&self, p: Point) -> bool {
        let tol = 1e-12 * self.length.max(self.width);
        p[0] >= -tol && p[0] <= self.length + tol && p[1] >= -tol && p[1] <= self.width + tol
    }

    pub fn clamp(&self, p: Point) -> Point {
        [p[0].clamp(0.0, self.length), p[1].clamp(0.0, self.width)]
    }

    pub fn goal_vertices(&self) -> Vec<usize> {
        self.marked(|m| m.in_goal)
    }

    pub fn depot_vertices(&self) -> Vec<usize> {
        self.marked(|m| m.in_depot)
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        self.marked(|m| m.outer_boundary)
    }

    fn marked(&self, pred: impl Fn(&VertexMarker) -> bool) -> Vec<usize> {
        self.markers
            .iter()
            .enumerate()
            .filter(|(_, m)| pred(m))
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of distinct edges.
    pub fn n_edges(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// Writes the mesh (and optionally one point scalar field) as legacy VTK ASCII.
    pub fn write_vtk(&self, path: &Path, field: Option<(&str, &[f64])>) -> Result<()> {
        std::fs::write(path, self.vtk_string(field)).map_err(|e| Error::io(path, e))
    }

    pub fn vtk_string(&self, field: Option<(&str, &[f64])>) -> String {
        let mut s = String::new();
        s.push_str("# vtk DataFile Version 3.0\ncoupled-eikonal\nASCII\nDATASET UNSTRUCTURED_GRID\n");
        let _ = writeln!(s, "POINTS {} double", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.16e} {:.16e} 0", v[0], v[1]);
        }
        let _ = writeln!(s, "CELLS {} {}", self.triangles.len(), 4 * self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.triangles.len());
        for _ in &self.triangles {
            s.push_str("5\n");
        }
        if let Some((name, values)) = field {
            let _ = writeln!(s, "POINT_DATA {}", self.vertices.len());
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in values {
                let _ = writeln!(s, "{v:.16e}");
            }
        }
        s
    }
}

fn find_boundary_edges(vertices: &[Point], triangles: &[[usize; 3]]) -> Vec<BoundaryEdge> {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for &[a, b, c] in triangles {
        for (p, q) in [(a, b), (b, c), (c, a)] {
            *count.entry((p.min(q), p.max(q))).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for (t, &[a, b, c]) in triangles.iter().enumerate() {
        for (p, q) in [(a, b), (b, c), (c, a)] {
            if count[&(p.min(q), p.max(q))] == 1 {
                let (pa, pb) = (vertices[p], vertices[q]);
                let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                let len = (dx * dx + dy * dy).sqrt();
                out.push(BoundaryEdge {
                    a: p,
                    b: q,
                    triangle: t,
                    normal: [dy / len, -dx / len],
                    length: len,
                });
            }
        }
    }
    out
}

/// Bucket grid for point-in-triangle queries.
#[derive(Debug, Clone)]
pub struct PointLocator {
    nbx: usize,
    nby: usize,
    dx: f64,
    dy: f64,
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    pub fn new(mesh: &TriMesh) -> Self {
        let n = ((mesh.n_triangles() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let aspect = mesh.length / mesh.width;
        let nbx = ((n as f64 * aspect.sqrt()).ceil() as usize).max(1);
        let nby = ((n as f64 / aspect.sqrt()).ceil() as usize).max(1);
        let dx = mesh.length / nbx as f64;
        let dy = mesh.width / nby as f64;
        let mut buckets = vec![Vec::new(); nbx * nby];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let pts = tri.map(|i| mesh.vertices[i]);
            let (x0, x1) = minmax(pts.iter().map(|p| p[0]));
            let (y0, y1) = minmax(pts.iter().map(|p| p[1]));
            let bx0 = bucket_index(x0, dx, nbx, -1e-9);
            let bx1 = bucket_index(x1, dx, nbx, 1e-9);
            let by0 = bucket_index(y0, dy, nby, -1e-9);
            let by1 = bucket_index(y1, dy, nby, 1e-9);
            for by in by0..=by1 {
                for bx in bx0..=bx1 {
                    buckets[by * nbx + bx].push(t);
                }
            }
        }
        PointLocator {
            nbx,
            nby,
            dx,
            dy,
            buckets,
        }
    }

    /// Smallest-index triangle containing `p` (within a small tolerance),
    /// or `None` when `p` lies outside the mesh.
    pub fn locate(&self, mesh: &TriMesh, p: Point) -> Option<usize> {
        if !mesh.contains(p) {
            return None;
        }
        let p = mesh.clamp(p);
        let bx = bucket_index(p[0], self.dx, self.nbx, 0.0);
        let by = bucket_index(p[1], self.dy, self.nby, 0.0);
        let cands = &self.buckets[by * self.nbx + bx];
        let mut best: Option<(usize, f64)> = None;
        for &t in cands {
            let l = mesh.barycentric(t, p);
            let worst = l[0].min(l[1]).min(l[2]);
            if worst >= -1e-12 {
                return Some(t);
            }
            if best.is_none_or(|(_, w)| worst > w) {
                best = Some((t, worst));
            }
        }
        // p is inside the rectangle, so rounding is the only way to miss
        best.map(|(t, _)| t)
    }
}

fn minmax(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn bucket_index(x: f64, d: f64, n: usize, nudge: f64) -> usize {
    let s = x / d + nudge;
    if s <= 0.0 {
        0
    } else {
        (s.floor() as usize).min(n - 1)
    }
}

/// Marked-mesh helper used throughout: base `nx × ny` grid over the spec's
/// domain, refined `levels` times, then goal/depot marked.
pub fn problem_mesh(spec: &ProblemSpec, nx: usize, ny: usize, levels: u32) -> Result<TriMesh> {
    let mesh = refined_rectangle(spec.domain.length, spec.domain.width, nx, ny, levels)?;
    mark_regions(&mesh, spec)
}

/// Vertex nearest to `p`.
pub fn nearest_vertex(mesh: &TriMesh, p: Point) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in mesh.vertices.iter().enumerate() {
        let d = crate::model::dist(*v, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Region;

    fn total_area(m: &TriMesh) -> f64 {
        (0..m.n_triangles()).map(|t| m.area(t)).sum()
    }

    fn check_conforming(m: &TriMesh) {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for &[a, b, c] in &m.triangles {
            for e in [(a, b), (b, c), (c, a)] {
                *directed.entry(e).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            assert_eq!(n, 1, "edge {a}->{b} repeated with the same orientation");
        }
        let boundary: usize = directed.keys().filter(|(a, b)| !directed.contains_key(&(*b, *a))).count();
        assert_eq!(boundary, m.boundary_edges.len());
        // boundary edges form a single closed loop
        let next: HashMap<usize, usize> = m.boundary_edges.iter().map(|e| (e.a, e.b)).collect();
        assert_eq!(next.len(), m.boundary_edges.len());
        let start = m.boundary_edges[0].a;
        let (mut v, mut steps) = (next[&start], 1);
        while v != start {
            v = next[&v];
            steps += 1;
            assert!(steps <= m.boundary_edges.len());
        }
        assert_eq!(steps, m.boundary_edges.len());
    }

    #[test]
    fn counts() {
        let m = build_rectangle_mesh(2.0, 1.0, 2, 1).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (6, 4));
        let m = build_rectangle_mesh(2.0, 1.0, 256, 128).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (33153, 65536));
        let r = refined_rectangle(2.0, 1.0, 2, 1, 7).unwrap();
        assert_eq!((r.n_vertices(), r.n_triangles()), (33153, 65536));
    }

    #[test]
    fn unit_square_halves() {
        let m = build_rectangle_mesh(1.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.area(0), 0.5);
        assert_eq!(m.area(1), 0.5);
    }

    #[test]
    fn invalid_domain() {
        assert!(matches!(build_rectangle_mesh(0.0, 1.0, 1, 1), Err(Error::InvalidDomain(_))));
        assert!(matches!(build_rectangle_mesh(1.0, -1.0, 1, 1), Err(Error::InvalidDomain(_))));
        assert!(build_rectangle_mesh(1.0, 1.0, 0, 1).is_err());
    }

    #[test]
    fn refinement_properties() {
        let mut m = build_rectangle_mesh(2.0, 1.0, 2, 1).unwrap();
        for _ in 0..4 {
            let r = refine_uniform(&m);
            assert_eq!(r.n_triangles(), 4 * m.n_triangles());
            assert!((total_area(&r) - total_area(&m)).abs() < 1e-12);
            assert!((r.mesh_size() - 0.5 * m.mesh_size()).abs() < 1e-12);
            assert!((0..r.n_triangles()).all(|t| r.double_area(t) > 0.0));
            assert_eq!(&r.vertices[..m.n_vertices()], &m.vertices[..]);
            check_conforming(&r);
            let euler = r.n_vertices() as i64 - r.n_edges() as i64 + r.n_triangles() as i64;
            assert_eq!(euler, 1);
            m = r;
        }
        assert!((total_area(&m) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_normals_point_outward() {
        let m = refined_rectangle(2.0, 1.0, 2, 1, 2).unwrap();
        for e in &m.boundary_edges {
            let mid = [
                0.5 * (m.vertices[e.a][0] + m.vertices[e.b][0]),
                0.5 * (m.vertices[e.a][1] + m.vertices[e.b][1]),
            ];
            let probe = [mid[0] + 1e-3 * e.normal[0], mid[1] + 1e-3 * e.normal[1]];
            assert!(!m.contains(probe));
            let on_side = mid[0].abs() < 1e-14
                || (mid[0] - 2.0).abs() < 1e-14
                || mid[1].abs() < 1e-14
                || (mid[1] - 1.0).abs() < 1e-14;
            assert!(on_side);
        }
        assert_eq!(m.boundary_vertices().len(), 2 * (8 + 4));
    }

    #[test]
    fn marking() {
        let spec = ProblemSpec::road_scenario();
        let m = problem_mesh(&spec, 2, 1, 7).unwrap();
        let goal = m.goal_vertices();
        assert!(!goal.is_empty());
        assert!(goal.contains(&nearest_vertex(&m, [1.9, 0.5])));
        assert_eq!(goal, m.depot_vertices());

        let mut bad = spec.clone();
        bad.goal = Region::disc([5.0, 5.0], 0.0);
        let coarse = refined_rectangle(2.0, 1.0, 2, 1, 2).unwrap();
        assert!(matches!(mark_regions(&coarse, &bad), Err(Error::RegionResolution { .. })));
    }

    #[test]
    fn markers_survive_refinement() {
        let mut spec = ProblemSpec::road_scenario();
        spec.goal = Region::disc([1.9, 0.5], 0.2);
        let coarse = problem_mesh(&spec, 2, 1, 3).unwrap();
        let fine = mark_regions(&refine_uniform(&coarse), &spec).unwrap();
        for v in coarse.goal_vertices() {
            assert!(fine.markers[v].in_goal);
        }
    }

    #[test]
    fn locator_finds_every_centroid() {
        let m = refined_rectangle(2.0, 1.0, 2, 1, 4).unwrap();
        let loc = PointLocator::new(&m);
        for t in 0..m.n_triangles() {
            assert_eq!(loc.locate(&m, m.centroid(t)), Some(t));
        }
        assert!(loc.locate(&m, [2.0, 1.0]).is_some());
        assert!(loc.locate(&m, [0.0, 0.0]).is_some());
        assert!(loc.locate(&m, [2.5, 0.5]).is_none());
    }

    #[test]
    fn vtk_header_counts() {
        let m = build_rectangle_mesh(2.0, 1.0, 2, 1).unwrap();
        let s = m.vtk_string(None);
        assert!(s.contains("POINTS 6 double"));
        assert!(s.contains("CELLS 4 16"));
        assert!(s.contains("CELL_TYPES 4"));
    }
}
