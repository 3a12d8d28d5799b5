//! Forward operators `F: D(F) -> Y` with Jacobian and adjoint-Jacobian actions.
//!
//! Adjoints are taken with respect to the h-weighted inner products of the
//! parameter and data spaces, so `<F'(x) h, r>_Y = <h, F'(x)^* r>_X`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{build_laplacian, dot, Grid, GridFunction, SparseOperator, SpdSystem};

/// Entrywise bounds `lower <= x_i <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    pub lower: f64,
    pub upper: f64,
}

impl BoxConstraint {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return domain(format!("box constraint needs lower <= upper, got [{lower}, {upper}]"));
        }
        Ok(Self { lower, upper })
    }

    pub fn nonnegative() -> Self {
        Self { lower: 0.0, upper: f64::INFINITY }
    }

    pub fn contains(&self, x: &GridFunction) -> bool {
        x.values().iter().all(|&v| v >= self.lower && v <= self.upper)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn intersect(&self, other: &BoxConstraint) -> Option<BoxConstraint> {
        let lower = self.lower.max(other.lower);
        let upper = self.upper.min(other.upper);
        (lower <= upper).then_some(BoxConstraint { lower, upper })
    }
}

/// Result of evaluating `F(x)`, keeping whatever the derivative actions reuse.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub output: GridFunction,
    system: Option<SpdSystem>,
}

impl Evaluation {
    fn system(&self) -> &SpdSystem {
        self.system.as_ref().expect("evaluation carries no PDE system")
    }
}

pub trait ForwardProblem: Send + Sync {
    fn name(&self) -> &'static str;

    /// Zero element of the parameter space.
    fn parameter_zero(&self) -> GridFunction;

    fn data_grid(&self) -> Grid;

    /// Box description of `D(F)`, `None` when `D(F) = X`.
    fn domain(&self) -> Option<BoxConstraint> {
        None
    }

    fn is_linear(&self) -> bool {
        false
    }

    fn evaluate(&self, x: &GridFunction) -> Result<Evaluation>;

    fn jac_apply_at(&self, x: &GridFunction, eval: &Evaluation, dir: &GridFunction) -> Result<GridFunction>;

    fn jac_adjoint_apply_at(&self, x: &GridFunction, eval: &Evaluation, r: &GridFunction) -> Result<GridFunction>;

    fn check_domain(&self, x: &GridFunction) -> Result<()> {
        let zero = self.parameter_zero();
        if !x.same_space(&zero) {
            return domain(format!(
                "{}: parameter has {} values on {:?}, expected {} on {:?}",
                self.name(),
                x.len(),
                x.support(),
                zero.len(),
                zero.support()
            ));
        }
        if let Some(b) = self.domain() {
            if !b.contains(x) {
                return domain(format!(
                    "{}: parameter outside D(F) = [{}, {}] (range [{}, {}])",
                    self.name(),
                    b.lower,
                    b.upper,
                    x.min(),
                    x.max()
                ));
            }
        }
        Ok(())
    }

    fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        Ok(self.evaluate(x)?.output)
    }

    fn jac_apply(&self, x: &GridFunction, dir: &GridFunction) -> Result<GridFunction> {
        let e = self.evaluate(x)?;
        self.jac_apply_at(x, &e, dir)
    }

    fn jac_adjoint_apply(&self, x: &GridFunction, r: &GridFunction) -> Result<GridFunction> {
        let e = self.evaluate(x)?;
        self.jac_adjoint_apply_at(x, &e, r)
    }
}

/// `b -> u` with `-Δu = b`, `u = 0` on the boundary.
#[derive(Debug, Clone)]
pub struct SourceProblem {
    grid: Grid,
    laplacian: SparseOperator,
    system: SpdSystem,
}

impl SourceProblem {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.is_point() {
            return domain("source problem needs a 1D or 2D grid");
        }
        let laplacian = build_laplacian(&grid);
        let system = SpdSystem::new(laplacian.clone())?;
        Ok(Self { grid, laplacian, system })
    }

    pub fn laplacian(&self) -> &SparseOperator {
        &self.laplacian
    }

    fn solve(&self, b: &GridFunction) -> Result<GridFunction> {
        Ok(b.like(self.system.solve(b.values())?))
    }
}

impl ForwardProblem for SourceProblem {
    fn name(&self) -> &'static str {
        "source"
    }

    fn parameter_zero(&self) -> GridFunction {
        GridFunction::zeros(self.grid)
    }

    fn data_grid(&self) -> Grid {
        self.grid
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn evaluate(&self, b: &GridFunction) -> Result<Evaluation> {
        self.check_domain(b)?;
        Ok(Evaluation { output: self.solve(b)?, system: None })
    }

    fn jac_apply_at(&self, _x: &GridFunction, _eval: &Evaluation, dir: &GridFunction) -> Result<GridFunction> {
        self.solve(dir)
    }

    fn jac_adjoint_apply_at(&self, _x: &GridFunction, _eval: &Evaluation, r: &GridFunction) -> Result<GridFunction> {
        self.solve(r)
    }
}

/// Dirichlet data: affine `g0 -> g1` in 1D, a constant in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValues {
    pub left: f64,
    pub right: f64,
}

impl BoundaryValues {
    pub fn homogeneous() -> Self {
        Self { left: 0.0, right: 0.0 }
    }

    pub fn constant(g: f64) -> Self {
        Self { left: g, right: g }
    }

    /// Harmonic lifting of the boundary data sampled on interior nodes.
    pub fn lifting(&self, grid: Grid) -> Result<GridFunction> {
        if grid.dim() == 2 && self.left != self.right {
            return domain("2D boundary data must be constant");
        }
        let (l, r, len) = (self.left, self.right, grid.length());
        Ok(GridFunction::sample(grid, |x, _| l + (r - l) * x / len))
    }
}

/// `c -> u` with `-Δu + c u = f`, `u = g` on the boundary, `D(F) = {c >= 0}`.
#[derive(Debug, Clone)]
pub struct PotentialProblem {
    grid: Grid,
    laplacian: SparseOperator,
    f: GridFunction,
    lifting: GridFunction,
}

impl PotentialProblem {
    pub fn new(f: GridFunction, g: BoundaryValues) -> Result<Self> {
        let grid = *f.grid();
        if grid.is_point() {
            return domain("potential problem needs a 1D or 2D grid");
        }
        let lifting = g.lifting(grid)?;
        Ok(Self { grid, laplacian: build_laplacian(&grid), f, lifting })
    }

    pub fn lifting(&self) -> &GridFunction {
        &self.lifting
    }

    /// Derivative action `du = -(A + diag c)^{-1} (h ⊙ u_c)` given the state `u_c`.
    pub fn jac_apply_with_state(&self, c: &GridFunction, u_c: &GridFunction, dir: &GridFunction) -> Result<GridFunction> {
        let system = self.system(c)?;
        let rhs: Vec<f64> = dir.values().iter().zip(u_c.values()).map(|(h, u)| -h * u).collect();
        Ok(u_c.like(system.solve(&rhs)?))
    }

    fn system(&self, c: &GridFunction) -> Result<SpdSystem> {
        SpdSystem::new(self.laplacian.plus_diagonal(c.values()))
    }
}

impl ForwardProblem for PotentialProblem {
    fn name(&self) -> &'static str {
        "potential"
    }

    fn parameter_zero(&self) -> GridFunction {
        GridFunction::zeros(self.grid)
    }

    fn data_grid(&self) -> Grid {
        self.grid
    }

    fn domain(&self) -> Option<BoxConstraint> {
        Some(BoxConstraint::nonnegative())
    }

    fn evaluate(&self, c: &GridFunction) -> Result<Evaluation> {
        self.check_domain(c)?;
        let system = self.system(c)?;
        let rhs: Vec<f64> = self
            .f
            .values()
            .iter()
            .zip(c.values())
            .zip(self.lifting.values())
            .map(|((f, c), g)| f - c * g)
            .collect();
        let w = system.solve(&rhs)?;
        let u = w.iter().zip(self.lifting.values()).map(|(w, g)| w + g).collect();
        Ok(Evaluation { output: self.f.like(u), system: Some(system) })
    }

    fn jac_apply_at(&self, _c: &GridFunction, eval: &Evaluation, dir: &GridFunction) -> Result<GridFunction> {
        let rhs: Vec<f64> = dir.values().iter().zip(eval.output.values()).map(|(h, u)| -h * u).collect();
        Ok(eval.output.like(eval.system().solve(&rhs)?))
    }

    fn jac_adjoint_apply_at(&self, _c: &GridFunction, eval: &Evaluation, r: &GridFunction) -> Result<GridFunction> {
        let z = eval.system().solve(r.values())?;
        Ok(r.like(z.iter().zip(eval.output.values()).map(|(z, u)| -z * u).collect()))
    }
}

/// `a -> u` with `-(a u')' = f` on `(0, ℓ)`, `u(0) = g0`, `u(ℓ) = g1`,
/// conservative 3-point scheme with `a` on the `n + 1` cells.
#[derive(Debug, Clone)]
pub struct DiffusionProblem1d {
    grid: Grid,
    f: GridFunction,
    boundary: BoundaryValues,
    bounds: BoxConstraint,
}

impl DiffusionProblem1d {
    pub fn new(f: GridFunction, boundary: BoundaryValues, bounds: BoxConstraint) -> Result<Self> {
        let grid = *f.grid();
        if grid.dim() != 1 {
            return domain("diffusivity identification is implemented in 1D only");
        }
        if !(bounds.lower > 0.0) || !bounds.upper.is_finite() {
            return domain(format!(
                "diffusivity bounds need 0 < lower <= upper < inf, got [{}, {}]",
                bounds.lower, bounds.upper
            ));
        }
        Ok(Self { grid, f, boundary, bounds })
    }

    fn operator(&self, a: &[f64]) -> Result<SpdSystem> {
        let n = self.grid.n();
        let ih2 = 1.0 / (self.grid.h() * self.grid.h());
        let mut t = Vec::with_capacity(3 * n);
        for i in 0..n {
            t.push((i, i, (a[i] + a[i + 1]) * ih2));
            if i + 1 < n {
                t.push((i, i + 1, -a[i + 1] * ih2));
                t.push((i + 1, i, -a[i + 1] * ih2));
            }
        }
        SpdSystem::new(SparseOperator::from_triplets(n, t, true))
    }

    /// Cell differences `(u_k - u_{k-1}) / h` of the full state including boundary values.
    fn cell_gradient(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let h = self.grid.h();
        (0..=n)
            .map(|k| {
                let right = if k < n { u[k] } else { self.boundary.right };
                let left = if k > 0 { u[k - 1] } else { self.boundary.left };
                (right - left) / h
            })
            .collect()
    }

    /// `D^T q` for cell values `q` (homogeneous boundary).
    fn divergence(&self, q: &[f64]) -> Vec<f64> {
        let h = self.grid.h();
        (0..q.len() - 1).map(|i| (q[i] - q[i + 1]) / h).collect()
    }

    fn zero_boundary_gradient(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let h = self.grid.h();
        (0..=n)
            .map(|k| {
                let right = if k < n { v[k] } else { 0.0 };
                let left = if k > 0 { v[k - 1] } else { 0.0 };
                (right - left) / h
            })
            .collect()
    }

    /// Derivative action `du = -L_a^{-1} D^T (D u_a ⊙ h)` given the state `u_a`.
    pub fn jac_apply_with_state(&self, a: &GridFunction, u_a: &GridFunction, dir: &GridFunction) -> Result<GridFunction> {
        self.check_domain(a)?;
        let system = self.operator(a.values())?;
        self.jac_from(&system, u_a, dir)
    }

    fn jac_from(&self, system: &SpdSystem, u_a: &GridFunction, dir: &GridFunction) -> Result<GridFunction> {
        let grad = self.cell_gradient(u_a.values());
        let q: Vec<f64> = grad.iter().zip(dir.values()).map(|(g, d)| g * d).collect();
        let rhs: Vec<f64> = self.divergence(&q).iter().map(|v| -v).collect();
        Ok(u_a.like(system.solve(&rhs)?))
    }
}

impl ForwardProblem for DiffusionProblem1d {
    fn name(&self) -> &'static str {
        "diffusion1d"
    }

    fn parameter_zero(&self) -> GridFunction {
        GridFunction::cells_constant(self.grid, 0.0)
    }

    fn data_grid(&self) -> Grid {
        self.grid
    }

    fn domain(&self) -> Option<BoxConstraint> {
        Some(self.bounds)
    }

    fn evaluate(&self, a: &GridFunction) -> Result<Evaluation> {
        self.check_domain(a)?;
        let system = self.operator(a.values())?;
        let slope = (self.boundary.right - self.boundary.left) / self.grid.length();
        let flux: Vec<f64> = a.values().iter().map(|a| a * slope).collect();
        let lift_div = self.divergence(&flux);
        let rhs: Vec<f64> = self.f.values().iter().zip(&lift_div).map(|(f, d)| f - d).collect();
        let v = system.solve(&rhs)?;
        let lifting = self.boundary.lifting(self.grid)?;
        let u = v.iter().zip(lifting.values()).map(|(v, g)| v + g).collect();
        Ok(Evaluation { output: self.f.like(u), system: Some(system) })
    }

    fn jac_apply_at(&self, _a: &GridFunction, eval: &Evaluation, dir: &GridFunction) -> Result<GridFunction> {
        self.jac_from(eval.system(), &eval.output, dir)
    }

    fn jac_adjoint_apply_at(&self, a: &GridFunction, eval: &Evaluation, r: &GridFunction) -> Result<GridFunction> {
        let z = eval.system().solve(r.values())?;
        let dz = self.zero_boundary_gradient(&z);
        let grad = self.cell_gradient(eval.output.values());
        Ok(a.like(grad.iter().zip(&dz).map(|(g, d)| -g * d).collect()))
    }
}

/// Sample nonlinearity `f(x) = (x - x0)^3 + y` of the lifted counterexample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicShift {
    pub x0: f64,
    pub y: f64,
}

impl CubicShift {
    pub fn value(&self, x: f64) -> f64 {
        (x - self.x0).powi(3) + self.y
    }

    pub fn derivative(&self, x: f64) -> f64 {
        3.0 * (x - self.x0).powi(2)
    }
}

/// `F(x)(t) = ∫ Φ(t - s) f(x(s)) ds` with a nonnegative normalized kernel,
/// discretized as `(F x)_i = Σ_j w_ij f(x_j)` with unit row sums.
#[derive(Debug, Clone)]
pub struct KernelProblem {
    grid: Grid,
    weights: Vec<f64>,
    cubic: CubicShift,
}

impl KernelProblem {
    /// Row-major weights; rejected unless nonnegative with rows summing to 1.
    pub fn from_weights(grid: Grid, weights: Vec<f64>, cubic: CubicShift) -> Result<Self> {
        let n = grid.node_count();
        if weights.len() != n * n {
            return Err(Error::Config(format!("kernel needs {n}x{n} weights, got {}", weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("kernel weights must be finite and nonnegative".into()));
        }
        for (i, row) in weights.chunks(n).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("kernel row {i} sums to {s}, expected 1")));
            }
        }
        Ok(Self { grid, weights, cubic })
    }

    pub fn identity(grid: Grid, cubic: CubicShift) -> Self {
        let n = grid.node_count();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Self { grid, weights, cubic }
    }

    /// Discrete Gaussian `exp(-(t - s)^2 / (2 σ^2))`, balanced to a symmetric
    /// doubly stochastic matrix so the normalization holds in both variables.
    pub fn gaussian(grid: Grid, sigma: f64, cubic: CubicShift) -> Result<Self> {
        if grid.dim() != 1 {
            return domain("Gaussian kernel is provided on 1D grids");
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("kernel width must be positive, got {sigma}")));
        }
        let n = grid.n();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = grid.node(i) - grid.node(j);
                k[i * n + j] = (-d * d / (2.0 * sigma * sigma)).exp();
            }
        }
        // symmetric Sinkhorn-Knopp: d <- sqrt(d / (K d))
        let mut d = vec![1.0; n];
        for _ in 0..10_000 {
            let kd: Vec<f64> = (0..n).map(|i| dot(&k[i * n..(i + 1) * n], &d)).collect();
            let worst = (0..n).map(|i| (d[i] * kd[i] - 1.0).abs()).fold(0.0, f64::max);
            if worst < 1e-15 {
                break;
            }
            for i in 0..n {
                d[i] = (d[i] / kd[i]).sqrt();
            }
        }
        let mut weights: Vec<f64> = (0..n * n).map(|ij| d[ij / n] * k[ij] * d[ij % n]).collect();
        for row in weights.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= s);
        }
        Self::from_weights(grid, weights, cubic)
    }

    pub fn cubic(&self) -> CubicShift {
        self.cubic
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn n(&self) -> usize {
        self.grid.node_count()
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        self.weights.chunks(n).map(|row| dot(row, v)).collect()
    }

    fn mul_transpose(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for (row, vi) in self.weights.chunks(n).zip(v) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * vi;
            }
        }
        out
    }

    /// First-order optimality field
    /// `p(s) = -f'(x(s)) ∫ Φ(t - s) (F(x)(t) - y^δ(t)) dt`.
    pub fn optimality_p(&self, x: &GridFunction, ydelta: &GridFunction) -> Result<GridFunction> {
        let fx = self.apply(x)?;
        let r: Vec<f64> = fx.values().iter().zip(ydelta.values()).map(|(a, b)| a - b).collect();
        let back = self.mul_transpose(&r);
        Ok(x.like(x.values().iter().zip(&back).map(|(&xi, b)| -self.cubic.derivative(xi) * b).collect()))
    }
}

impl ForwardProblem for KernelProblem {
    fn name(&self) -> &'static str {
        "kernel"
    }

    fn parameter_zero(&self) -> GridFunction {
        GridFunction::zeros(self.grid)
    }

    fn data_grid(&self) -> Grid {
        self.grid
    }

    fn evaluate(&self, x: &GridFunction) -> Result<Evaluation> {
        self.check_domain(x)?;
        let fx: Vec<f64> = x.values().iter().map(|&v| (v - self.cubic.x0).powi(3)).collect();
        let out = self.mul(&fx).into_iter().map(|v| v + self.cubic.y).collect();
        Ok(Evaluation { output: x.like(out), system: None })
    }

    fn jac_apply_at(&self, x: &GridFunction, _eval: &Evaluation, dir: &GridFunction) -> Result<GridFunction> {
        let g: Vec<f64> = x.values().iter().zip(dir.values()).map(|(&xi, d)| self.cubic.derivative(xi) * d).collect();
        Ok(x.like(self.mul(&g)))
    }

    fn jac_adjoint_apply_at(&self, x: &GridFunction, _eval: &Evaluation, r: &GridFunction) -> Result<GridFunction> {
        let back = self.mul_transpose(r.values());
        Ok(x.like(x.values().iter().zip(&back).map(|(&xi, b)| self.cubic.derivative(xi) * b).collect()))
    }
}

/// Linear map given by a dense matrix between two grid-function spaces.
#[derive(Debug, Clone)]
pub struct DenseLinearProblem {
    parameter: GridFunction,
    data: Grid,
    rows: usize,
    matrix: Vec<f64>,
}

impl DenseLinearProblem {
    /// `matrix` is row-major with `data.node_count()` rows.
    pub fn new(parameter_space: Grid, data: Grid, matrix: Vec<f64>) -> Result<Self> {
        let parameter = GridFunction::zeros(parameter_space);
        let rows = data.node_count();
        if matrix.len() != rows * parameter.len() {
            return domain(format!("matrix needs {}x{} entries, got {}", rows, parameter.len(), matrix.len()));
        }
        Ok(Self { parameter, data, rows, matrix })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    fn cols(&self) -> usize {
        self.parameter.len()
    }
}

impl ForwardProblem for DenseLinearProblem {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn parameter_zero(&self) -> GridFunction {
        self.parameter.clone()
    }

    fn data_grid(&self) -> Grid {
        self.data
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn evaluate(&self, x: &GridFunction) -> Result<Evaluation> {
        self.check_domain(x)?;
        let out = self.matrix.chunks(self.cols()).map(|row| dot(row, x.values())).collect();
        Ok(Evaluation { output: GridFunction::new(self.data, out)?, system: None })
    }

    fn jac_apply_at(&self, _x: &GridFunction, _eval: &Evaluation, dir: &GridFunction) -> Result<GridFunction> {
        Ok(self.evaluate(dir)?.output)
    }

    fn jac_adjoint_apply_at(&self, x: &GridFunction, _eval: &Evaluation, r: &GridFunction) -> Result<GridFunction> {
        let ratio = self.data.weight() / x.weight();
        let mut out = vec![0.0; self.cols()];
        for (row, ri) in self.matrix.chunks(self.cols()).zip(r.values()).take(self.rows) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += ratio * m * ri;
            }
        }
        Ok(x.like(out))
    }
}
