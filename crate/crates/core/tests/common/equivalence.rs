//! Solver-versus-dense-oracle gaps on random instances. Each function
//! returns `max |x_solver - x_oracle|` for instance `k`.

use nalgebra::DVector;
use quasisol_core::grid::GridFunction;
use quasisol_core::regularizer::Regularizer;
use quasisol_core::solver::{ivanov_solve, morozov_solve, tikhonov_solve, MisfitS, SolverOptions};

use super::{box_qp, dense_instance, morozov_ridge_path, noisy, ridge, to_gf, to_vec};

pub fn max_diff(a: &GridFunction, b: &DVector<f64>) -> f64 {
    a.values().iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Ivanov with the sup ball against the box-constrained least-squares QP.
pub fn ivanov_gap(k: u64) -> f64 {
    let inst = dense_instance(100 + k, 12, 15);
    let yd = noisy(&to_gf(inst.grid_y, &inst.y_exact), 0.05, k);
    let rho = 0.6;
    let oracle = box_qp(&inst.a, &to_vec(&yd), -rho, rho);
    let sol = ivanov_solve(&inst.problem, &Regularizer::sup(), rho, &yd, MisfitS::default(), &SolverOptions::default(), None)
        .unwrap();
    max_diff(&sol.x, &oracle)
}

/// Quadratic Tikhonov with the L2 norm against the ridge normal equations.
pub fn tikhonov_gap(k: u64) -> f64 {
    let inst = dense_instance(200 + k, 15, 15);
    let yd = noisy(&to_gf(inst.grid_y, &inst.y_exact), 0.05, k);
    let alpha = 1e-2 * (1 + k % 5) as f64;
    let oracle = ridge(&inst.a, &to_vec(&yd), alpha, inst.grid_x.weight(), inst.grid_y.weight());
    let sol = tikhonov_solve(&inst.problem, &Regularizer::l2(), alpha, 2, &yd, MisfitS::default(), &SolverOptions::default(), None)
        .unwrap();
    max_diff(&sol.x, &oracle)
}

/// Morozov with the L2 norm against a bisection scan of the ridge path.
/// Also returns whether the misfit and R bounds held.
pub fn morozov_gap(k: u64) -> (f64, bool) {
    let inst = dense_instance(300 + k, 10, 15);
    let (delta, tau) = (0.05, 1.5);
    let yd = noisy(&to_gf(inst.grid_y, &inst.y_exact), delta, k);
    let oracle = morozov_ridge_path(&inst.a, &to_vec(&yd), tau * delta, inst.grid_x.weight(), inst.grid_y.weight());
    let reg = Regularizer::l2();
    let out = morozov_solve(&inst.problem, &reg, tau, delta, &yd, MisfitS::default(), 1e-8, &SolverOptions::default()).unwrap();
    let bounds = out.solution.misfit <= tau * delta + 1e-8
        && out.solution.r_value <= reg.value(&to_gf(inst.grid_x, &inst.x_true)) + 1e-6;
    (max_diff(&out.solution.x, &oracle), bounds)
}
