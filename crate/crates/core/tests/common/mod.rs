//! Dense reference solvers and property checks shared by the integration tests.
#![allow(dead_code)]

pub mod equivalence;
pub mod properties;

use nalgebra::{DMatrix, DVector};
use quasisol_core::forward::DenseLinearProblem;
use quasisol_core::grid::{Grid, GridFunction};
use quasisol_core::regularizer::Regularizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `min ½ ||A x - y||^2` subject to `lo <= x <= hi`, primal active-set method.
pub fn box_qp(a: &DMatrix<f64>, y: &DVector<f64>, lo: f64, hi: f64) -> DVector<f64> {
    let n = a.ncols();
    let h = a.transpose() * a;
    let g = a.transpose() * y;
    // state: 0 free, -1 at lower, 1 at upper
    let mut state = vec![0i8; n];
    let mut x = DVector::from_element(n, 0.0f64.clamp(lo, hi));
    for _ in 0..50 * n + 100 {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut target = x.clone();
        for i in 0..n {
            if state[i] != 0 {
                target[i] = if state[i] < 0 { lo } else { hi };
            }
        }
        if !free.is_empty() {
            let m = free.len();
            let hff = DMatrix::from_fn(m, m, |i, j| h[(free[i], free[j])]);
            let mut rhs = DVector::from_fn(m, |i, _| g[free[i]]);
            for (ii, &i) in free.iter().enumerate() {
                for j in 0..n {
                    if state[j] != 0 {
                        rhs[ii] -= h[(i, j)] * target[j];
                    }
                }
            }
            let sol = hff.cholesky().expect("SPD reduced Hessian").solve(&rhs);
            for (ii, &i) in free.iter().enumerate() {
                target[i] = sol[ii];
            }
        }
        let mut step = 1.0;
        let mut block = None;
        for &i in &free {
            let p = target[i] - x[i];
            if target[i] < lo && p < 0.0 {
                let s = (lo - x[i]) / p;
                if s < step {
                    step = s;
                    block = Some((i, -1));
                }
            } else if target[i] > hi && p > 0.0 {
                let s = (hi - x[i]) / p;
                if s < step {
                    step = s;
                    block = Some((i, 1));
                }
            }
        }
        if let Some((i, side)) = block {
            x += (&target - &x) * step;
            state[i] = side;
            x[i] = if side < 0 { lo } else { hi };
            continue;
        }
        x = target;
        let grad = &h * &x - &g;
        let mut worst = 1e-13;
        let mut release = None;
        for i in 0..n {
            let v = match state[i] {
                -1 => -grad[i],
                1 => grad[i],
                _ => 0.0,
            };
            if v > worst {
                worst = v;
                release = Some(i);
            }
        }
        match release {
            Some(i) => state[i] = 0,
            None => return x,
        }
    }
    panic!("box QP oracle did not terminate");
}

/// Solution of `(w_y A^T A + α w_x I) x = w_y A^T y`.
pub fn ridge(a: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, wx: f64, wy: f64) -> DVector<f64> {
    let n = a.ncols();
    let m = a.transpose() * a * wy + DMatrix::identity(n, n) * (alpha * wx);
    m.cholesky().expect("SPD").solve(&(a.transpose() * y * wy))
}

/// Minimum-norm point of `{sqrt(w_y) ||A x - y|| <= level}` by bisection on the ridge path.
pub fn morozov_ridge_path(a: &DMatrix<f64>, y: &DVector<f64>, level: f64, wx: f64, wy: f64) -> DVector<f64> {
    let residual = |alpha: f64| ((a * ridge(a, y, alpha, wx, wy) - y).norm_squared() * wy).sqrt();
    let (mut lo, mut hi) = (1e-14f64, 1.0f64);
    while residual(hi) < level {
        hi *= 10.0;
    }
    // residual is increasing in α; bisect in log scale
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if residual(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ridge(a, y, lo, wx, wy)
}

pub struct DenseInstance {
    pub problem: DenseLinearProblem,
    pub a: DMatrix<f64>,
    pub x_true: DVector<f64>,
    pub y_exact: DVector<f64>,
    pub grid_x: Grid,
    pub grid_y: Grid,
}

/// Random Gaussian `m × n` instance with a smooth exact solution.
pub fn dense_instance(seed: u64, n: usize, m: usize) -> DenseInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt());
    let grid_x = Grid::new_1d(n, 1.0).unwrap();
    let grid_y = Grid::new_1d(m, 2.0).unwrap();
    let x_true = DVector::from_fn(n, |i, _| (3.0 * grid_x.node(i)).sin() + rng.random_range(-0.2..0.2));
    let y_exact = &a * &x_true;
    let rows: Vec<f64> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();
    let problem = DenseLinearProblem::new(grid_x, grid_y, rows).unwrap();
    DenseInstance { problem, a, x_true, y_exact, grid_x, grid_y }
}

pub fn to_gf(grid: Grid, v: &DVector<f64>) -> GridFunction {
    GridFunction::new(grid, v.iter().copied().collect()).unwrap()
}

pub fn to_vec(v: &GridFunction) -> DVector<f64> {
    DVector::from_column_slice(v.values())
}

/// Dense matrix of a linear forward operator, column by column.
pub fn dense_of(apply: impl Fn(&GridFunction) -> GridFunction, template: &GridFunction) -> DMatrix<f64> {
    let n = template.len();
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            to_vec(&apply(&template.like(e)))
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// `y + δ e / ||e||_h` with seeded standard-normal `e`.
pub fn noisy(y: &GridFunction, delta: f64, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = y.like((0..y.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    y.axpy(delta / e.norm(), &e)
}

pub fn increment_matrix(n: usize, w: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| match (i, j) {
        (0, 0) => w,
        _ if i == j => 1.0,
        _ if j + 1 == i => -1.0,
        _ => 0.0,
    })
}

/// Projection onto `{z : ||T z||_1 <= ρ}` by enumerating the sign pattern of `T z`
/// and solving the equality-constrained KKT system of each face.
pub fn bv_kkt_oracle(x: &[f64], w: f64, rho: f64) -> Vec<f64> {
    let n = x.len();
    let t = increment_matrix(n, w);
    let xv = DVector::from_column_slice(x);
    let tx = &t * &xv;
    if tx.iter().map(|v| v.abs()).sum::<f64>() <= rho {
        return x.to_vec();
    }
    let ttt = &t * t.transpose();
    let mut best: Option<Vec<f64>> = None;
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut c = code;
        let sigma: Vec<f64> = (0..n)
            .map(|_| {
                let s = (c % 3) as f64 - 1.0;
                c /= 3;
                s
            })
            .collect();
        if sigma.iter().all(|&s| s == 0.0) {
            continue;
        }
        let zero: Vec<usize> = (0..n).filter(|&i| sigma[i] == 0.0).collect();
        // unknowns: λ then v_i for i in zero; z = x - T^T v, v_i = λ σ_i off the zero set
        let m = zero.len() + 1;
        let sig = DVector::from_column_slice(&sigma);
        let col_lambda = &ttt * &sig;
        let mut a = DMatrix::zeros(m, m);
        let mut b = DVector::zeros(m);
        // rows: (T z)_i = 0 for i in zero, σ^T T z = ρ; T z = Tx - TT^T v
        let rows: Vec<DVector<f64>> = zero
            .iter()
            .map(|&i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                e
            })
            .chain(std::iter::once(sig.clone()))
            .collect();
        for (r, row) in rows.iter().enumerate() {
            b[r] = row.dot(&tx) - if r + 1 == m { rho } else { 0.0 };
            a[(r, 0)] = row.dot(&col_lambda);
            for (k, &j) in zero.iter().enumerate() {
                a[(r, k + 1)] = row.dot(&ttt.column(j));
            }
        }
        let Some(sol) = a.lu().solve(&b) else { continue };
        let lambda = sol[0];
        if !(lambda > 0.0) {
            continue;
        }
        let mut v = &sig * lambda;
        for (k, &j) in zero.iter().enumerate() {
            v[j] = sol[k + 1];
        }
        let z = &xv - t.transpose() * &v;
        let tz = &t * &z;
        let dual_ok = zero.iter().all(|&j| v[j].abs() <= lambda * (1.0 + 1e-9));
        let sign_ok = (0..n).all(|i| sigma[i] == 0.0 || tz[i] * sigma[i] > 0.0);
        if dual_ok && sign_ok {
            let z: Vec<f64> = z.iter().copied().collect();
            if let Some(prev) = &best {
                let gap = prev.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(gap < 1e-9, "oracle found two different KKT points");
            }
            best = Some(z);
        }
    }
    best.expect("no KKT face")
}

pub fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn regularizers(grid: Grid, rng: &mut ChaCha8Rng) -> Vec<Regularizer> {
    let center = GridFunction::new(grid, (0..grid.node_count()).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    vec![
        Regularizer::sup(),
        Regularizer::l2(),
        Regularizer::bv1d(1.0).unwrap(),
        Regularizer::sup().with_center(center.clone()),
        Regularizer::l2().with_center(center.clone()),
        Regularizer::bv1d(0.5).unwrap().with_center(center),
    ]
}

pub fn random(grid: Grid, rng: &mut ChaCha8Rng, scale: f64) -> GridFunction {
    GridFunction::new(grid, (0..grid.node_count()).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}
