//! Uniform grids, grid functions, discrete Laplacians and the discrete norms
//! used as data misfit and error measure.
//!
//! Boundary values are eliminated: a grid function stores interior nodes only
//! and the homogeneous Dirichlet value is implicit. Every norm and inner
//! product carries the quadrature weight `h^dim`, so discrete quantities
//! approximate their continuum counterparts.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Default relative tolerance for inner SPD solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    h: f64,
}

impl Grid {
    pub fn new_1d(n: usize, length: f64) -> Result<Self> {
        Self::new(1, n, length)
    }

    pub fn new_2d(n: usize, length: f64) -> Result<Self> {
        Self::new(2, n, length)
    }

    /// `n` interior nodes per axis on `(0, length)^dim`, spacing `length / (n + 1)`.
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return domain(format!("grid dimension must be 1 or 2, got {dim}"));
        }
        if n < 2 {
            return domain(format!("grid needs at least 2 interior nodes per axis, got {n}"));
        }
        if !(length.is_finite() && length > 0.0) {
            return domain(format!("domain length must be positive, got {length}"));
        }
        Ok(Self { dim, n, length, h: length / (n as f64 + 1.0) })
    }

    /// Single-point "grid" with unit weight: the home of scalar problems.
    pub fn point() -> Self {
        Self { dim: 0, n: 1, length: 1.0, h: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interior nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_point(&self) -> bool {
        self.dim == 0
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cell count of a 1D grid (`n + 1`, one cell between consecutive nodes
    /// including the two boundary cells).
    pub fn cell_count(&self) -> usize {
        if self.dim == 1 {
            self.n + 1
        } else {
            self.node_count()
        }
    }

    /// Quadrature weight `h^dim`.
    pub fn weight(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Coordinate of interior node `i` along one axis.
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.h
    }

    /// Midpoint of 1D cell `k`, which spans `[k h, (k + 1) h]`.
    pub fn cell_midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.h
    }

    /// Smallest eigenvalue of the discrete Dirichlet Laplacian on this grid.
    pub fn laplacian_min_eigenvalue(&self) -> f64 {
        let one_axis = 2.0 / (self.h * self.h) * (1.0 - (std::f64::consts::PI * self.h / self.length).cos());
        one_axis * self.dim as f64
    }
}

/// Where the values of a [`GridFunction`] live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Nodes,
    /// 1D cell midpoints (`n + 1` values), used for diffusivities.
    Cells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    support: Support,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::with_support(grid, Support::Nodes, values)
    }

    pub fn on_cells(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::with_support(grid, Support::Cells, values)
    }

    pub fn with_support(grid: Grid, support: Support, values: Vec<f64>) -> Result<Self> {
        if support == Support::Cells && grid.dim() != 1 {
            return domain("cell-supported grid functions exist on 1D grids only");
        }
        let expected = match support {
            Support::Nodes => grid.node_count(),
            Support::Cells => grid.cell_count(),
        };
        if values.len() != expected {
            return domain(format!("grid function needs {expected} values, got {}", values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return domain(format!("grid function entry {i} is not finite"));
        }
        Ok(Self { grid, support, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, support: Support::Nodes, values: vec![0.0; grid.node_count()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, support: Support::Nodes, values: vec![value; grid.node_count()] }
    }

    pub fn cells_constant(grid: Grid, value: f64) -> Self {
        Self { grid, support: Support::Cells, values: vec![value; grid.cell_count()] }
    }

    /// Samples `f` at the interior nodes. In 2D `f` receives `(x, y)`.
    pub fn sample(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = match grid.dim() {
            0 => vec![f(0.0, 0.0)],
            1 => (0..grid.n()).map(|i| f(grid.node(i), 0.0)).collect(),
            _ => {
                let n = grid.n();
                let mut v = Vec::with_capacity(n * n);
                for j in 0..n {
                    for i in 0..n {
                        v.push(f(grid.node(i), grid.node(j)));
                    }
                }
                v
            }
        };
        Self { grid, support: Support::Nodes, values }
    }

    /// Samples `f` at the 1D cell midpoints.
    pub fn sample_cells(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.cell_count()).map(|k| f(grid.cell_midpoint(k))).collect();
        Self { grid, support: Support::Cells, values }
    }

    /// Same grid and support, new values. Lengths must match.
    pub fn like(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "grid function length mismatch");
        Self { grid: self.grid, support: self.support, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self) -> f64 {
        self.grid.weight()
    }

    pub fn same_space(&self, other: &GridFunction) -> bool {
        self.support == other.support && self.values.len() == other.values.len() && self.grid == other.grid
    }

    /// h-weighted inner product.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        self.weight() * dot(&self.values, &other.values)
    }

    /// h-weighted Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> GridFunction {
        self.map(|v| v * s)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        self.like(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        assert_eq!(self.values.len(), other.values.len(), "grid function length mismatch");
        self.like(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>, symmetric: bool) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside {dim}x{dim}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { dim, row_ptr, col_idx, vals, symmetric }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    pub fn apply_fn(&self, v: &GridFunction) -> GridFunction {
        v.like(self.apply(v.values()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.col_idx[k] == r)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    /// Adds `d` to the diagonal (entries must already be present).
    pub fn plus_diagonal(&self, d: &[f64]) -> SparseOperator {
        assert_eq!(d.len(), self.dim);
        let mut out = self.clone();
        for (r, dr) in d.iter().enumerate() {
            let k = (self.row_ptr[r]..self.row_ptr[r + 1])
                .find(|&k| self.col_idx[k] == r)
                .expect("diagonal entry missing from sparsity pattern");
            out.vals[k] += dr;
        }
        out
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.dim]; self.dim];
        for (r, row) in m.iter_mut().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row[self.col_idx[k]] += self.vals[k];
            }
        }
        m
    }

    /// Bandwidth, i.e. max |row - col| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.dim)
            .flat_map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, k)))
            .map(|(r, k)| r.abs_diff(self.col_idx[k]))
            .max()
            .unwrap_or(0)
    }

    fn entry(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .filter(|&k| self.col_idx[k] == c)
            .map(|k| self.vals[k])
            .sum()
    }
}

/// 3-point (1D) or 5-point (2D) negative Laplacian with homogeneous Dirichlet
/// boundary, acting on interior nodes.
pub fn build_laplacian(grid: &Grid) -> SparseOperator {
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    match grid.dim() {
        1 => {
            let mut t = Vec::with_capacity(3 * n);
            for i in 0..n {
                t.push((i, i, 2.0 * inv_h2));
                if i > 0 {
                    t.push((i, i - 1, -inv_h2));
                }
                if i + 1 < n {
                    t.push((i, i + 1, -inv_h2));
                }
            }
            SparseOperator::from_triplets(n, t, true)
        }
        2 => {
            let idx = |i: usize, j: usize| j * n + i;
            let mut t = Vec::with_capacity(5 * n * n);
            for j in 0..n {
                for i in 0..n {
                    let r = idx(i, j);
                    t.push((r, r, 4.0 * inv_h2));
                    if i > 0 {
                        t.push((r, idx(i - 1, j), -inv_h2));
                    }
                    if i + 1 < n {
                        t.push((r, idx(i + 1, j), -inv_h2));
                    }
                    if j > 0 {
                        t.push((r, idx(i, j - 1), -inv_h2));
                    }
                    if j + 1 < n {
                        t.push((r, idx(i, j + 1), -inv_h2));
                    }
                }
            }
            SparseOperator::from_triplets(n * n, t, true)
        }
        _ => SparseOperator::from_triplets(1, vec![(0, 0, 1.0)], true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients on raw vectors.
pub fn pcg(a: &SparseOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgStats)> {
    if !(tol > 0.0) {
        return domain(format!("solver tolerance must be positive, got {tol}"));
    }
    let n = a.dim();
    assert_eq!(b.len(), n);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], CgStats { iterations: 0, relative_residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = 1.0;
    for it in 1..=max_iter {
        a.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverFailure { iterations: it, residual: res });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / b_norm;
        if res <= tol {
            return Ok((x, CgStats { iterations: it, relative_residual: res }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure { iterations: max_iter, residual: res })
}

/// Iteration cap: ten times the number of unknowns (`10 n^2` on a 2D grid).
pub fn default_iteration_cap(unknowns: usize) -> usize {
    10 * unknowns.max(1)
}

/// Solves `A u = b` for SPD `A` to relative residual `tol`.
pub fn solve_spd(a: &SparseOperator, b: &GridFunction, tol: f64) -> Result<GridFunction> {
    if a.dim() != b.len() {
        return domain(format!("operator dimension {} does not match right-hand side length {}", a.dim(), b.len()));
    }
    let (x, _) = pcg(a, b.values(), tol, default_iteration_cap(a.dim()))?;
    Ok(b.like(x))
}

/// Discrete `L^p` norm `(sum h^dim |v_i|^p)^(1/p)`, max-norm for `p = inf`.
pub fn lp_norm(v: &GridFunction, p: f64) -> Result<f64> {
    lp_norm_weighted(v.values(), v.weight(), p)
}

pub(crate) fn lp_norm_weighted(v: &[f64], weight: f64, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return domain(format!("L^p norm needs p >= 1, got {p}"));
    }
    if p.is_infinite() {
        return Ok(v.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    }
    if p == 2.0 {
        return Ok((weight * dot(v, v)).sqrt());
    }
    if p == 1.0 {
        return Ok(weight * v.iter().map(|x| x.abs()).sum::<f64>());
    }
    // scale by the max entry to avoid overflow in |v|^p
    let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = v.iter().map(|x| (x.abs() / m).powf(p)).sum();
    Ok(m * (weight * s).powf(1.0 / p))
}

/// Discrete `H^{-1}` norm `sqrt(h^dim <v, A^{-1} v>)` with `A` the discrete
/// Dirichlet Laplacian on `v`'s grid.
pub fn h_minus1_norm(v: &GridFunction, a: &SparseOperator) -> Result<f64> {
    let w = solve_spd(a, v, DEFAULT_SOLVE_TOL)?;
    let q = dot(v.values(), w.values()).max(0.0);
    Ok((v.weight() * q).sqrt())
}

/// LDL^T factorization of a symmetric positive definite tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalFactor {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl TridiagonalFactor {
    /// `diag` has length `n`, `off` length `n - 1` (the symmetric off-diagonal).
    pub fn new(diag: &[f64], off: &[f64]) -> Result<Self> {
        let n = diag.len();
        assert!(n >= 1 && off.len() + 1 == n);
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = diag[0];
        for i in 1..n {
            if !(d[i - 1] > 0.0) {
                return domain("tridiagonal matrix is not positive definite");
            }
            l[i - 1] = off[i - 1] / d[i - 1];
            d[i] = diag[i] - l[i - 1] * off[i - 1];
        }
        if !(d[n - 1] > 0.0) {
            return domain("tridiagonal matrix is not positive definite");
        }
        Ok(Self { d, l })
    }

    pub fn from_operator(a: &SparseOperator) -> Result<Self> {
        if a.bandwidth() > 1 {
            return domain("operator is not tridiagonal");
        }
        let n = a.dim();
        let diag = a.diagonal();
        let off: Vec<f64> = (1..n).map(|i| a.entry(i, i - 1)).collect();
        Self::new(&diag, &off)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
        x
    }
}

/// A factored or iteratively solved SPD system, as held by forward problems.
#[derive(Debug, Clone)]
pub enum SpdSystem {
    Banded(TridiagonalFactor),
    Iterative { op: SparseOperator, tol: f64 },
}

impl SpdSystem {
    /// Tridiagonal operators are factored directly, everything else goes
    /// through preconditioned CG.
    pub fn new(op: SparseOperator) -> Result<Self> {
        if op.bandwidth() <= 1 {
            Ok(SpdSystem::Banded(TridiagonalFactor::from_operator(&op)?))
        } else {
            Ok(SpdSystem::Iterative { op, tol: DEFAULT_SOLVE_TOL })
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSystem::Banded(f) => Ok(f.solve(b)),
            SpdSystem::Iterative { op, tol } => {
                let (x, _) = pcg(op, b, *tol, default_iteration_cap(op.dim()))?;
                Ok(x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::new_1d(n, 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new_1d(1, 1.0).is_err());
        assert!(Grid::new_1d(3, 0.0).is_err());
        assert!(Grid::new(3, 4, 1.0).is_err());
        let g = grid(3);
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.cell_count(), 4);
        assert_eq!(Grid::new_2d(4, 1.0).unwrap().node_count(), 16);
    }

    #[test]
    fn grid_function_rejects_bad_input() {
        let g = grid(3);
        assert!(GridFunction::new(g, vec![1.0, 2.0]).is_err());
        assert!(GridFunction::new(g, vec![1.0, f64::NAN, 2.0]).is_err());
        assert!(GridFunction::on_cells(g, vec![0.0; 4]).is_ok());
        assert!(GridFunction::on_cells(Grid::new_2d(3, 1.0).unwrap(), vec![0.0; 9]).is_err());
    }

    #[test]
    fn laplacian_stencil_n3() {
        let a = build_laplacian(&grid(3)).to_dense();
        assert_eq!(a[0], vec![32.0, -16.0, 0.0]);
        assert_eq!(a[1], vec![-16.0, 32.0, -16.0]);
        assert_eq!(a[2], vec![0.0, -16.0, 32.0]);
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let a = build_laplacian(&grid(7));
        assert!(a.apply(&[0.0; 7]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_exact_on_quadratic() {
        let g = grid(63);
        let u = GridFunction::sample(g, |x, _| x * (1.0 - x) / 2.0);
        let b = build_laplacian(&g).apply(u.values());
        assert!(b.iter().all(|&v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn solve_constant_source() {
        let g = grid(63);
        let a = build_laplacian(&g);
        let u = solve_spd(&a, &GridFunction::constant(g, 1.0), 1e-12).unwrap();
        assert!((u.values()[31] - 0.125).abs() < 1e-8);
        let z = solve_spd(&a, &GridFunction::zeros(g), 1e-10).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solve_reports_failure_with_residual() {
        let g = grid(31);
        let a = build_laplacian(&g);
        let b = GridFunction::sample(g, |x, _| (7.0 * x).sin() + x);
        let err = pcg(&a, b.values(), 1e-14, 2).unwrap_err();
        match err {
            Error::SolverFailure { iterations, residual } => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_tolerance_is_rejected() {
        let g = grid(3);
        assert!(solve_spd(&build_laplacian(&g), &GridFunction::constant(g, 1.0), 0.0).is_err());
    }

    #[test]
    fn lp_norm_examples() {
        let g = grid(3);
        let one = GridFunction::constant(g, 1.0);
        assert!((lp_norm(&one, 2.0).unwrap() - 0.75_f64.sqrt()).abs() < 1e-15);
        assert_eq!(lp_norm(&GridFunction::zeros(g), 2.0).unwrap(), 0.0);
        let v = GridFunction::new(g, vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(lp_norm(&v, f64::INFINITY).unwrap(), 3.0);
        assert!((lp_norm(&v, 1.0).unwrap() - 1.5).abs() < 1e-15);
        let p3 = (0.25 * (1.0 + 8.0 + 27.0_f64)).powf(1.0 / 3.0);
        assert!((lp_norm(&v, 3.0).unwrap() - p3).abs() < 1e-14);
        assert!(lp_norm(&v, 0.5).is_err());
    }

    #[test]
    fn h_minus1_of_image_unrolls() {
        let g = grid(15);
        let a = build_laplacian(&g);
        let w = GridFunction::sample(g, |x, _| x.powi(2) - x.sin());
        let v = a.apply_fn(&w);
        let expected = (g.weight() * dot(v.values(), w.values())).sqrt();
        assert!((h_minus1_norm(&v, &a).unwrap() - expected).abs() < 1e-9 * expected);
        assert_eq!(h_minus1_norm(&GridFunction::zeros(g), &a).unwrap(), 0.0);
    }

    #[test]
    fn tridiagonal_factor_matches_cg() {
        let g = grid(40);
        let a = build_laplacian(&g).plus_diagonal(&(0..40).map(|i| i as f64 * 0.3).collect::<Vec<_>>());
        let b = GridFunction::sample(g, |x, _| (3.0 * x).cos());
        let direct = TridiagonalFactor::from_operator(&a).unwrap().solve(b.values());
        let (iter, _) = pcg(&a, b.values(), 1e-13, 10_000).unwrap();
        for (x, y) in direct.iter().zip(&iter) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn two_dimensional_laplacian_solves() {
        let g = Grid::new_2d(15, 1.0).unwrap();
        let a = build_laplacian(&g);
        assert_eq!(a.bandwidth(), 15);
        let u = GridFunction::sample(g, |x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin());
        let b = a.apply_fn(&u);
        let back = solve_spd(&a, &b, 1e-12).unwrap();
        assert!(back.sub(&u).max_abs() < 1e-9);
    }

    #[test]
    fn min_eigenvalue_formula() {
        let g = grid(15);
        let h = g.h();
        let expected = 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * h).cos());
        assert!((g.laplacian_min_eigenvalue() - expected).abs() < 1e-12);
    }
}
