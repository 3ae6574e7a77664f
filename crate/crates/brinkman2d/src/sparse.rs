//! Sparse symmetric matrices on the cell-adjacency graph, an IC(0)
//! preconditioner, and a preconditioned conjugate gradient solver.
//!
//! Matrices are stored in full (both triangles) compressed-row form with
//! sorted column indices. The incomplete-Cholesky factor is cached on the
//! matrix so repeated solves with new right-hand sides reuse it.

use thiserror::Error;

use crate::mesh::TriMesh;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("IC(0) breakdown at row {row}: non-positive pivot {pivot}")]
    BreakdownNonSpd { row: usize, pivot: f64 },
    #[error("PCG exceeded {iters} iterations (residual {residual:.3e}, target {target:.3e})")]
    MaxIterationsExceeded { iters: usize, residual: f64, target: f64, best: Vec<f64> },
    #[error("entry ({row},{col}) not in sparsity pattern")]
    NotInPattern { row: usize, col: usize },
}

/// Symmetric positive-definite sparse matrix (CSR, full storage) with an
/// optional cached IC(0) factor.
#[derive(Clone, Debug)]
pub struct SparseSpd {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    factor: Option<IcFactor>,
}

/// Lower-triangular IC(0) factor sharing the matrix's lower pattern.
#[derive(Clone, Debug)]
pub struct IcFactor {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Build an empty (zero-valued) matrix from per-row column sets.
    /// The diagonal is always included; columns are sorted.
    pub fn from_pattern(mut pattern: Vec<Vec<usize>>) -> Self {
        let n = pattern.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for (i, cols) in pattern.iter_mut().enumerate() {
            if !cols.contains(&i) {
                cols.push(i);
            }
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        SparseSpd { n, row_ptr, col_idx, values, factor: None }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    fn find(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi].binary_search(&col).ok().map(|k| lo + k)
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) -> Result<(), LinalgError> {
        let k = self.find(row, col).ok_or(LinalgError::NotInPattern { row, col })?;
        self.values[k] = v;
        self.factor = None;
        Ok(())
    }

    pub fn add(&mut self, row: usize, col: usize, v: f64) -> Result<(), LinalgError> {
        let k = self.find(row, col).ok_or(LinalgError::NotInPattern { row, col })?;
        self.values[k] += v;
        self.factor = None;
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.find(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn clear_values(&mut self) {
        self.values.fill(0.0);
        self.factor = None;
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            out[i] = acc;
        }
    }

    /// Largest violation of numeric symmetry, relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// Factorize once and cache; later calls are free.
    pub fn ensure_factor(&mut self) -> Result<&IcFactor, LinalgError> {
        if self.factor.is_none() {
            self.factor = Some(ic0_factorize(self)?);
        }
        Ok(self.factor.as_ref().unwrap())
    }

    pub fn factor(&self) -> Option<&IcFactor> {
        self.factor.as_ref()
    }
}

/// Empty matrix with the mesh's cell-adjacency sparsity (self + neighbors).
pub fn assemble_pattern(mesh: &TriMesh) -> SparseSpd {
    let mut pattern = vec![Vec::with_capacity(4); mesh.n_cells()];
    for side in &mesh.sides {
        if let Some((ep, _)) = side.neighbor {
            pattern[side.cell].push(ep);
            pattern[ep].push(side.cell);
        }
    }
    SparseSpd::from_pattern(pattern)
}

/// Zero-fill incomplete Cholesky: lower-triangular factor restricted to the
/// matrix sparsity pattern.
pub fn ic0_factorize(a: &SparseSpd) -> Result<IcFactor, LinalgError> {
    let n = a.n;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            if a.col_idx[k] <= i {
                col_idx.push(a.col_idx[k]);
            }
        }
        row_ptr.push(col_idx.len());
    }
    let mut values = vec![0.0; col_idx.len()];

    // Row-oriented up-looking factorization; the sparse dot products walk
    // the already-computed rows via sorted-merge.
    for i in 0..n {
        let (ri, ri_end) = (row_ptr[i], row_ptr[i + 1]);
        debug_assert!(ri_end > ri && col_idx[ri_end - 1] == i, "diagonal must be present");
        for kk in ri..ri_end {
            let j = col_idx[kk];
            let aij = a.get(i, j);
            let mut sum = aij;
            // sum -= L[i,p] * L[j,p] for shared p < j.
            let (mut pi, mut pj) = (ri, row_ptr[j]);
            let (pi_end, pj_end) = (ri_end, row_ptr[j + 1]);
            while pi < pi_end && pj < pj_end {
                let (ci, cj) = (col_idx[pi], col_idx[pj]);
                if ci >= j || cj >= j {
                    break;
                }
                match ci.cmp(&cj) {
                    std::cmp::Ordering::Less => pi += 1,
                    std::cmp::Ordering::Greater => pj += 1,
                    std::cmp::Ordering::Equal => {
                        sum -= values[pi] * values[pj];
                        pi += 1;
                        pj += 1;
                    }
                }
            }
            if j == i {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(LinalgError::BreakdownNonSpd { row: i, pivot: sum });
                }
                values[kk] = sum.sqrt();
            } else {
                let diag_j = values[row_ptr[j + 1] - 1];
                values[kk] = sum / diag_j;
            }
        }
    }

    Ok(IcFactor { n, row_ptr, col_idx, values })
}

impl IcFactor {
    /// Apply the preconditioner: z = (L L^T)^-1 r.
    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        debug_assert_eq!(r.len(), self.n);
        // Forward substitution L y = r (y stored in z).
        for i in 0..self.n {
            let mut acc = r[i];
            let end = self.row_ptr[i + 1] - 1; // last entry is the diagonal
            for k in self.row_ptr[i]..end {
                acc -= self.values[k] * z[self.col_idx[k]];
            }
            z[i] = acc / self.values[end];
        }
        // Backward substitution L^T z = y.
        for i in (0..self.n).rev() {
            let end = self.row_ptr[i + 1] - 1;
            let zi = z[i] / self.values[end];
            z[i] = zi;
            for k in self.row_ptr[i]..end {
                z[self.col_idx[k]] -= self.values[k] * zi;
            }
        }
    }

    /// Dense lower-triangular representation (for oracle tests).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[i][self.col_idx[k]] = self.values[k];
            }
        }
        out
    }
}

/// Options for [`pcg_solve_opts`].
#[derive(Clone, Copy, Debug)]
pub struct PcgOptions {
    /// Relative 2-norm residual target: |b - Ax|_2 <= tol * |b|_2.
    pub tol: f64,
    /// Additional max-norm target relative to |b|_inf (0 disables it).
    pub tol_inf: f64,
    pub max_iter: usize,
}

impl PcgOptions {
    pub fn with_tol(tol: f64, n: usize) -> Self {
        PcgOptions { tol, tol_inf: 0.0, max_iter: default_max_iter(n) }
    }
}

pub fn default_max_iter(n: usize) -> usize {
    (10.0 * (n as f64).sqrt()) as usize + 100
}

/// Result of a successful PCG solve.
#[derive(Clone, Debug)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradient with IC(0), zero initial guess.
pub fn pcg_solve(
    a: &mut SparseSpd,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PcgOutcome, LinalgError> {
    let n = a.n;
    let x0 = vec![0.0; n];
    pcg_solve_opts(a, b, &x0, PcgOptions { tol, tol_inf: 0.0, max_iter })
}

/// PCG with an initial guess and optional max-norm polishing target.
pub fn pcg_solve_opts(
    a: &mut SparseSpd,
    b: &[f64],
    x0: &[f64],
    opts: PcgOptions,
) -> Result<PcgOutcome, LinalgError> {
    let n = a.n;
    assert_eq!(b.len(), n);
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok(PcgOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    a.ensure_factor()?;
    let factor = a.factor().expect("factor just ensured");

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    a.mul_vec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let target2 = opts.tol * norm_b;
    let target_inf = if opts.tol_inf > 0.0 {
        opts.tol_inf * b.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    } else {
        f64::INFINITY
    };

    let converged = |r: &[f64]| norm2(r) <= target2 && norm_inf(r) <= target_inf;
    if converged(&r) {
        let res = norm2(&r);
        return Ok(PcgOutcome { x, iterations: 0, residual: res });
    }

    let mut z = vec![0.0; n];
    factor.solve(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut best_x = x.clone();
    let mut best_res = norm2(&r);
    let mut stagnation = 0usize;

    for it in 1..=opts.max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Matrix is not SPD along p; surface as a breakdown.
            return Err(LinalgError::BreakdownNonSpd { row: it, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm2(&r);
        if res < best_res {
            best_res = res;
            best_x.copy_from_slice(&x);
            stagnation = 0;
        } else {
            stagnation += 1;
        }
        if converged(&r) {
            return Ok(PcgOutcome { x, iterations: it, residual: res });
        }
        // Max-norm polishing cannot go below numerical stagnation.
        if stagnation > 12 && res <= target2 {
            return Ok(PcgOutcome { x: best_x, iterations: it, residual: best_res });
        }
        factor.solve(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Err(LinalgError::MaxIterationsExceeded {
        iters: opts.max_iter,
        residual: best_res,
        target: target2,
        best: best_x,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Vec2;
    use crate::mesh::{build_mesh, test_meshes::tag_all};
    use approx::assert_relative_eq;

    fn dense_from(values: &[&[f64]]) -> SparseSpd {
        let n = values.len();
        let mut m = SparseSpd::from_pattern(vec![(0..n).collect(); n]);
        for (i, row) in values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v).unwrap();
            }
        }
        m
    }

    #[test]
    fn identity_factor_is_identity() {
        let mut a = SparseSpd::from_pattern(vec![vec![0], vec![1], vec![2]]);
        for i in 0..3 {
            a.set(i, i, 1.0).unwrap();
        }
        let f = ic0_factorize(&a).unwrap();
        let d = f.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn tridiagonal_ic0_equals_dense_cholesky() {
        // Pattern is already triangular-complete, so IC(0) is exact.
        let n = 5;
        let mut pattern = Vec::new();
        for i in 0..n {
            let mut cols = vec![i];
            if i > 0 {
                cols.push(i - 1);
            }
            if i + 1 < n {
                cols.push(i + 1);
            }
            pattern.push(cols);
        }
        let mut a = SparseSpd::from_pattern(pattern);
        for i in 0..n {
            a.set(i, i, 2.0).unwrap();
            if i > 0 {
                a.set(i, i - 1, -1.0).unwrap();
            }
            if i + 1 < n {
                a.set(i, i + 1, -1.0).unwrap();
            }
        }
        let f = ic0_factorize(&a).unwrap();
        let l = f.to_dense();
        // Dense Cholesky oracle.
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            dense[i][i] = 2.0;
            if i > 0 {
                dense[i][i - 1] = -1.0;
                dense[i - 1][i] = -1.0;
            }
        }
        let mut chol = vec![vec![0.0_f64; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum: f64 = dense[i][j];
                for p in 0..j {
                    sum -= chol[i][p] * chol[j][p];
                }
                if i == j {
                    chol[i][j] = sum.sqrt();
                } else {
                    chol[i][j] = sum / chol[j][j];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(l[i][j], chol[i][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zero_diagonal_breaks_down() {
        let mut a = SparseSpd::from_pattern(vec![vec![0, 1], vec![0, 1]]);
        a.set(0, 0, 0.0).unwrap();
        a.set(1, 1, 1.0).unwrap();
        let err = ic0_factorize(&a).unwrap_err();
        assert!(matches!(err, LinalgError::BreakdownNonSpd { row: 0, .. }));
    }

    #[test]
    fn pcg_identity_single_iteration() {
        let mut a = dense_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = pcg_solve(&mut a, &[3.0, -2.0], 1e-12, 50).unwrap();
        assert!(out.iterations <= 1);
        assert_relative_eq!(out.x[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[1], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn pcg_two_by_two_exact() {
        let mut a = dense_from(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let out = pcg_solve(&mut a, &[1.0, 2.0], 1e-14, 50).unwrap();
        assert_relative_eq!(out.x[0], 1.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[1], 7.0 / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn pcg_zero_rhs_zero_iterations() {
        let mut a = dense_from(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let out = pcg_solve(&mut a, &[0.0, 0.0], 1e-12, 50).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0, 0.0]);
    }

    #[test]
    fn cached_factor_reuse_is_identical() {
        let mut a = dense_from(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let out1 = pcg_solve(&mut a, &[1.0, 2.0], 1e-12, 50).unwrap();
        // Second solve reuses the cached factor.
        assert!(a.factor().is_some());
        let out2 = pcg_solve(&mut a, &[1.0, 2.0], 1e-12, 50).unwrap();
        assert_eq!(out1.x, out2.x);
        // Explicit refactorization produces bitwise the same factor.
        let fresh = ic0_factorize(&a).unwrap();
        assert_eq!(fresh.values, a.factor().unwrap().values);
    }

    #[test]
    fn pattern_from_mesh_adjacency() {
        // Structured 8-cell strip: each row has at most 4 entries.
        let mut nodes = Vec::new();
        for i in 0..5 {
            nodes.push(Vec2::new(i as f64, 0.0));
            nodes.push(Vec2::new(i as f64 + 0.31, 1.0));
        }
        let mut cells = Vec::new();
        for i in 0..4 {
            let (a, b, c, d) = (2 * i, 2 * i + 1, 2 * i + 2, 2 * i + 3);
            cells.push([a, c, b]);
            cells.push([b, c, d]);
        }
        let mut bnd = Vec::new();
        for i in 0..4 {
            bnd.push((2 * i, 2 * i + 2));
            bnd.push((2 * i + 1, 2 * i + 3));
        }
        bnd.push((0, 1));
        bnd.push((8, 9));
        let mesh = build_mesh(nodes, cells, &tag_all(&bnd, "w")).unwrap();
        let a = assemble_pattern(&mesh);
        assert_eq!(a.n, 8);
        for i in 0..a.n {
            let nnz = a.row_ptr[i + 1] - a.row_ptr[i];
            assert!(nnz <= 4, "row {i} has {nnz} entries");
        }
        assert_eq!(a.symmetry_defect(), 0.0);
    }

    #[test]
    fn single_and_pair_patterns() {
        use crate::mesh::test_meshes::{equilateral_pair, unit_right_triangle};
        let a = assemble_pattern(&unit_right_triangle());
        assert_eq!((a.n, a.nnz()), (1, 1));
        let b = assemble_pattern(&equilateral_pair());
        assert_eq!((b.n, b.nnz()), (2, 4));
    }

    #[test]
    fn max_iterations_returns_best_iterate() {
        let mut a = dense_from(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let err = pcg_solve(&mut a, &[1.0, 2.0], 1e-16, 0).unwrap_err();
        match err {
            LinalgError::MaxIterationsExceeded { best, .. } => assert_eq!(best.len(), 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
