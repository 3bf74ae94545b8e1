//! Compressed sparse row storage and nonsymmetric linear solves.
//!
//! The default solver is restarted GMRES, right-preconditioned with ILU(0).
//! Small systems can fall back to dense LU with partial pivoting when the
//! Krylov iteration fails. Every reported residual is a true residual
//! `‖b − Ax‖₂ / ‖b‖₂` computed by an explicit matvec.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_offsets: Vec<usize>,
    pub column_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates in
    /// input order.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::MatrixBuild(format!(
                    "entry ({r}, {c}) outside a {n_rows} x {n_cols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, keeping input order within a row
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut column_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        for i in 0..n_rows {
            let row = &mut bucket[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == c {
                    sum += row[k].1;
                    k += 1;
                }
                column_indices.push(c);
                values.push(sum);
            }
            row_offsets.push(column_indices.len());
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_offsets,
            column_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            column_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.column_indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `‖b − Ax‖₂ / ‖b‖₂` (absolute residual when `b = 0`).
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.matvec(x);
        let r = norm2_diff(b, &ax);
        let bn = norm2(b);
        if bn > 0.0 {
            r / bn
        } else {
            r
        }
    }

    /// Checks the CSR structural invariants.
    pub fn check_invariants(&self) -> bool {
        self.row_offsets.len() == self.n_rows + 1
            && self.row_offsets[0] == 0
            && self.row_offsets.windows(2).all(|w| w[0] <= w[1])
            && *self.row_offsets.last().unwrap() == self.values.len()
            && self.column_indices.len() == self.values.len()
            && (0..self.n_rows).all(|i| {
                let (cols, _) = self.row(i);
                cols.windows(2).all(|w| w[0] < w[1]) && cols.iter().all(|&c| c < self.n_cols)
            })
    }

    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n_rows, self.n_cols, self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let _ = writeln!(s, "{} {} {:.16e}", i + 1, c + 1, v);
            }
        }
        s
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_matrix_market()).map_err(|e| Error::io(path, e))
    }

    fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                d[i * self.n_cols + c] = v;
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    /// Small systems: GMRES with ILU(0), falling back to dense LU.
    /// Large systems: sparse LU, polished by GMRES if its residual is
    /// above tolerance.
    Auto,
    Gmres,
    Dense,
    SparseLu,
}

/// Size at which `Auto` switches from GMRES to sparse LU.
pub const DENSE_FALLBACK_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub method: SolverMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 2000,
            restart: 60,
            method: SolverMethod::Auto,
        }
    }
}

/// Solves `Ax = b` from a zero initial guess.
pub fn solve(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let opts = SolverOptions {
        tol,
        max_iter,
        ..SolverOptions::default()
    };
    solve_with(a, b, None, &opts)
}

pub fn solve_with(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    if a.n_rows != a.n_cols || b.len() != a.n_rows {
        return Err(Error::MatrixBuild(format!(
            "solve needs a square system, got {} x {} with rhs of length {}",
            a.n_rows,
            a.n_cols,
            b.len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("solver tolerance must be positive, got {}", opts.tol)));
    }
    match opts.method {
        SolverMethod::Dense => Ok(dense_solve(a, b)),
        SolverMethod::Gmres => Ok(gmres(a, b, x0, opts)),
        SolverMethod::SparseLu => sparse_lu_solve(a, b),
        SolverMethod::Auto if a.n_rows >= DENSE_FALLBACK_LIMIT => {
            let (x, stats) = sparse_lu_solve(a, b)?;
            if stats.final_relative_residual <= opts.tol {
                return Ok((x, stats));
            }
            log::debug!("sparse LU residual {:e}; polishing with GMRES", stats.final_relative_residual);
            let (xg, mut gstats) = gmres(a, b, Some(&x), opts);
            gstats.iterations += stats.iterations;
            if gstats.final_relative_residual < stats.final_relative_residual {
                Ok((xg, gstats))
            } else {
                Ok((x, SolveStats { converged: false, ..stats }))
            }
        }
        SolverMethod::Auto => {
            let (x, stats) = gmres(a, b, x0, opts);
            if stats.converged {
                return Ok((x, stats));
            }
            log::debug!("GMRES stalled at {:e}; trying dense LU", stats.final_relative_residual);
            let (xd, mut dstats) = dense_solve(a, b);
            dstats.converged = dstats.final_relative_residual <= opts.tol;
            dstats.iterations += stats.iterations;
            if dstats.final_relative_residual < stats.final_relative_residual {
                Ok((xd, dstats))
            } else {
                Ok((x, stats))
            }
        }
    }
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Self {
        let n = a.n_rows;
        let mut lu = a.clone();
        let mut diag = vec![usize::MAX; n];
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_offsets[i], lu.row_offsets[i + 1]);
            for k in start..end {
                pos[lu.column_indices[k]] = k;
            }
            for k in start..end {
                let col = lu.column_indices[k];
                if col >= i {
                    break;
                }
                let pivot = lu.values[diag[col]];
                let lik = lu.values[k] / pivot;
                lu.values[k] = lik;
                for m in diag[col] + 1..lu.row_offsets[col + 1] {
                    let j = lu.column_indices[m];
                    let p = pos[j];
                    if p != usize::MAX {
                        lu.values[p] -= lik * lu.values[m];
                    }
                }
            }
            let d = pos[i];
            let row_scale = lu.values[start..end].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let floor = 1e-12 * row_scale.max(1e-300);
            if d == usize::MAX {
                // no stored diagonal: cannot happen for assembled systems
                panic!("ILU(0) needs a stored diagonal in row {i}");
            }
            if lu.values[d].abs() < floor {
                lu.values[d] = if lu.values[d] < 0.0 { -floor } else { floor };
            }
            diag[i] = d;
            for k in start..end {
                pos[lu.column_indices[k]] = usize::MAX;
            }
        }
        Ilu0 { lu, diag }
    }

    /// Overwrites `x` with `(LU)⁻¹ x`.
    pub fn apply(&self, x: &mut [f64]) {
        let n = self.lu.n_rows;
        for i in 0..n {
            let start = self.lu.row_offsets[i];
            let mut s = x[i];
            for k in start..self.diag[i] {
                s -= self.lu.values[k] * x[self.lu.column_indices[k]];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let end = self.lu.row_offsets[i + 1];
            let d = self.diag[i];
            let mut s = x[i];
            for k in d + 1..end {
                s -= self.lu.values[k] * x[self.lu.column_indices[k]];
            }
            x[i] = s / self.lu.values[d];
        }
    }
}

fn ensure_diagonal(a: &CsrMatrix) -> std::borrow::Cow<'_, CsrMatrix> {
    let missing = (0..a.n_rows).any(|i| a.row(i).0.binary_search(&i).is_err());
    if !missing {
        return std::borrow::Cow::Borrowed(a);
    }
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz() + a.n_rows);
    for i in 0..a.n_rows {
        let (cols, vals) = a.row(i);
        t.extend(cols.iter().zip(vals).map(|(&c, &v)| (i, c, v)));
        t.push((i, i, 0.0));
    }
    std::borrow::Cow::Owned(CsrMatrix::from_triplets(a.n_rows, a.n_cols, &t).expect("indices in range"))
}

fn gmres(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, opts: &SolverOptions) -> (Vec<f64>, SolveStats) {
    let n = a.n_rows;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return (
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                final_relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let precond = Ilu0::new(&ensure_diagonal(a));
    let m = opts.restart.max(1);
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![0.0; n],
    };
    let mut best = x.clone();
    let mut best_res = f64::INFINITY;
    let mut iterations = 0;
    let mut ax = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut h = vec![vec![0.0; m]; m + 1];
    let (mut cs, mut sn, mut g) = (vec![0.0; m], vec![0.0; m], vec![0.0; m + 1]);
    loop {
        a.matvec_into(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        let res = beta / bnorm;
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&x);
        }
        if !res.is_finite() || res <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        basis.clear();
        zs.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for j in 0..m {
            let mut z = basis[j].clone();
            precond.apply(&mut z);
            let mut w = a.matvec(&z);
            zs.push(z);
            for i in 0..=j {
                let hij = dot(&w, &basis[i]);
                h[i][j] = hij;
                axpy(-hij, &basis[i], &mut w);
            }
            let wn = norm2(&w);
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            iterations += 1;
            k_used = j + 1;
            let est = g[j + 1].abs() / bnorm;
            if est <= 0.5 * opts.tol || iterations >= opts.max_iter || wn <= 1e-14 * beta {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        if k_used == 0 {
            break;
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for k in i + 1..k_used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (yi, z) in y.iter().zip(&zs) {
            axpy(*yi, z, &mut x);
        }
    }
    (
        best,
        SolveStats {
            iterations,
            final_relative_residual: best_res,
            converged: best_res <= opts.tol,
        },
    )
}

/// Sparse LU with partial pivoting and fill-reducing ordering, followed by
/// one step of iterative refinement.
fn sparse_lu_solve(a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
    use faer::linalg::solvers::Solve;
    use faer::sparse::{SparseColMat, Triplet};

    let n = a.n_rows;
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..n {
        let (cols, vals) = a.row(i);
        triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| Triplet::new(i, j, v)));
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::MatrixBuild(format!("sparse LU input: {e:?}")))?;
    let lu = m
        .sp_lu()
        .map_err(|e| Error::MatrixBuild(format!("sparse LU factorization failed: {e:?}")))?;
    let solve = |r: &[f64]| -> Vec<f64> {
        let rhs = faer::Mat::from_fn(n, 1, |i, _| r[i]);
        let sol = lu.solve(&rhs);
        (0..n).map(|i| sol[(i, 0)]).collect()
    };
    let mut x = solve(b);
    let ax = a.matvec(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let dx = solve(&r);
    axpy(1.0, &dx, &mut x);
    let res = a.relative_residual(&x, b);
    Ok((
        x,
        SolveStats {
            iterations: 1,
            final_relative_residual: res,
            converged: res.is_finite(),
        },
    ))
}

/// Dense LU with partial pivoting; intended for small systems only.
fn dense_solve(a: &CsrMatrix, b: &[f64]) -> (Vec<f64>, SolveStats) {
    let n = a.n_rows;
    let mut m = a.to_dense();
    let mut x = b.to_vec();
    let mut singular = false;
    for k in 0..n {
        let (p, pv) = (k..n)
            .map(|i| (i, m[i * n + k].abs()))
            .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if pv == 0.0 {
            singular = true;
            continue;
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        let pivot = m[k * n + k];
        for i in k + 1..n {
            let f = m[i * n + k] / pivot;
            if f != 0.0 {
                m[i * n + k] = f;
                for j in k + 1..n {
                    m[i * n + j] -= f * m[k * n + j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = if m[i * n + i] != 0.0 { s / m[i * n + i] } else { 0.0 };
    }
    let res = a.relative_residual(&x, b);
    (
        x,
        SolveStats {
            iterations: 1,
            final_relative_residual: res,
            converged: !singular && res.is_finite(),
        },
    )
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
