//! Randomized property checks, one trial per call. The proptest suites and
//! the acceptance target both drive these.

use quasisol_core::config::NoiseMode;
use quasisol_core::experiments::{make_noisy, NoiseModel};
use quasisol_core::forward::{
    BoundaryValues, BoxConstraint, CubicShift, DiffusionProblem1d, ForwardProblem, KernelProblem, PotentialProblem,
    SourceProblem,
};
use quasisol_core::grid::{lp_norm, Grid, GridFunction};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{random, regularizers};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

pub fn random_like(template: &GridFunction, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> GridFunction {
    template.like((0..template.len()).map(|_| rng.random_range(lo..hi)).collect())
}

/// Feasibility, idempotence and nonexpansiveness of `project_within`.
pub fn projection(rng: &mut ChaCha8Rng) -> Check {
    let n = rng.random_range(2..20);
    let grid = Grid::new_1d(n, 1.0).unwrap();
    let bx = BoxConstraint::new(-1.5, 1.5).unwrap();
    let bounds = rng.random_bool(0.5).then_some(&bx);
    for reg in regularizers(grid, rng) {
        let x = random(grid, rng, 3.0);
        let y = random(grid, rng, 3.0);
        let rho = rng.random_range(0.05..2.0);
        let px = reg.project_within(&x, rho, bounds).map_err(|e| e.to_string())?;
        let py = reg.project_within(&y, rho, bounds).map_err(|e| e.to_string())?;
        ensure!(reg.value(&px) <= rho + 1e-12, "{:?}: R = {} > {rho}", reg.kind(), reg.value(&px));
        if let Some(b) = bounds {
            ensure!(b.contains(&px), "{:?}: left the box", reg.kind());
        }
        let ppx = reg.project_within(&px, rho, bounds).map_err(|e| e.to_string())?;
        ensure!(ppx.sub(&px).max_abs() <= 1e-9, "{:?}: not idempotent", reg.kind());
        let ratio = py.sub(&px).norm() / y.sub(&x).norm();
        ensure!(ratio <= 1.0 + 1e-9, "{:?}: expansion {ratio}", reg.kind());
    }
    Ok(())
}

/// `D_ξ(x̃, x) >= 0` and convexity in `x̃` along a segment.
pub fn bregman(rng: &mut ChaCha8Rng) -> Check {
    let n = rng.random_range(2..20);
    let grid = Grid::new_1d(n, 1.0).unwrap();
    for reg in regularizers(grid, rng) {
        let x = random(grid, rng, 2.0);
        let xi = reg.subgradient(&x);
        for _ in 0..5 {
            let xt = random(grid, rng, 2.0);
            let d = reg.bregman(&xi, &xt, &x);
            ensure!(d >= -1e-12, "{:?}: D = {d}", reg.kind());
            let lam = rng.random_range(0.0..1.0);
            let mix = xt.scale(lam).axpy(1.0 - lam, &x);
            ensure!(reg.bregman(&xi, &mix, &x) <= lam * d + 1e-12, "{:?}: not convex", reg.kind());
        }
        ensure!(reg.bregman(&xi, &x, &x).abs() <= 1e-12, "{:?}: D(x, x) != 0", reg.kind());
    }
    Ok(())
}

/// Every forward problem with the range its parameters are drawn from.
pub fn problems() -> Vec<(Box<dyn ForwardProblem>, f64, f64)> {
    let g = Grid::new_1d(31, 1.0).unwrap();
    let g2 = Grid::new_2d(9, 1.0).unwrap();
    vec![
        (Box::new(SourceProblem::new(g).unwrap()), -1.0, 1.0),
        (Box::new(SourceProblem::new(g2).unwrap()), -1.0, 1.0),
        (
            Box::new(PotentialProblem::new(GridFunction::constant(g, 1.0), BoundaryValues { left: 1.0, right: 2.0 }).unwrap()),
            0.0,
            5.0,
        ),
        (
            Box::new(PotentialProblem::new(GridFunction::constant(g2, 1.0), BoundaryValues::constant(1.0)).unwrap()),
            0.0,
            5.0,
        ),
        (
            Box::new(
                DiffusionProblem1d::new(
                    GridFunction::sample(g, |x, _| 1.0 + x),
                    BoundaryValues { left: 0.0, right: 2.0 },
                    BoxConstraint::new(0.5, 2.0).unwrap(),
                )
                .unwrap(),
            ),
            0.5,
            2.0,
        ),
        (Box::new(KernelProblem::gaussian(g, 0.1, CubicShift { x0: 1.2, y: 0.3 }).unwrap()), -1.2, 1.2),
    ]
}

/// `log10(err(1e-3) / err(1e-4))` for the Taylor remainder `F(x + εh) - F(x) - ε F'(x) h`.
pub fn fd_order(p: &dyn ForwardProblem, x: &GridFunction, dir: &GridFunction) -> f64 {
    let e = p.evaluate(x).unwrap();
    let j = p.jac_apply_at(x, &e, dir).unwrap();
    let err = |eps: f64| {
        let shifted = p.apply(&x.axpy(eps, dir)).unwrap();
        shifted.sub(&e.output).axpy(-eps, &j).norm()
    };
    (err(1e-3) / err(1e-4)).log10()
}

pub fn adjoint_gap(p: &dyn ForwardProblem, x: &GridFunction, dir: &GridFunction, r: &GridFunction) -> f64 {
    let e = p.evaluate(x).unwrap();
    let jh = p.jac_apply_at(x, &e, dir).unwrap();
    let jtr = p.jac_adjoint_apply_at(x, &e, r).unwrap();
    let scale = jh.norm() * r.norm() + dir.norm() * jtr.norm();
    (jh.inner(r) - dir.inner(&jtr)).abs() / scale.max(1e-300)
}

/// Relative gap of `<F'(x) h, r> = <h, F'(x)^* r>` on every problem.
pub fn adjoint(rng: &mut ChaCha8Rng) -> Check {
    for (p, lo, hi) in problems() {
        let zero = p.parameter_zero();
        let x = random_like(&zero, rng, lo, hi);
        let dir = random_like(&zero, rng, -1.0, 1.0);
        let r = random_like(&GridFunction::zeros(p.data_grid()), rng, -1.0, 1.0);
        let gap = adjoint_gap(p.as_ref(), &x, &dir, &r);
        ensure!(gap <= 1e-8, "{}: relative adjoint gap {gap}", p.name());
    }
    Ok(())
}

/// Second-order Taylor remainder on the nonlinear problems, at a random
/// point well inside the admissible range.
pub fn jacobian(rng: &mut ChaCha8Rng) -> Check {
    for (p, lo, hi) in problems().into_iter().filter(|(p, ..)| !p.is_linear()) {
        let zero = p.parameter_zero();
        let margin = 0.25 * (hi - lo);
        let x = random_like(&zero, rng, lo + margin, hi - margin);
        let dir = random_like(&zero, rng, -1.0, 1.0);
        let order = fd_order(p.as_ref(), &x, &dir);
        ensure!(order >= 1.9, "{}: finite-difference order {order}", p.name());
    }
    Ok(())
}

/// Scaled-random noise has misfit exactly δ.
pub fn noise_exact(rng: &mut ChaCha8Rng) -> Check {
    let n = rng.random_range(2..80);
    let grid = Grid::new_1d(n, rng.random_range(0.5..3.0)).unwrap();
    let y = random(grid, rng, 2.0);
    let p = [1.5, 2.0, 3.0, f64::INFINITY][rng.random_range(0..4)];
    let delta = 10f64.powf(rng.random_range(-6.0..0.0));
    let model = NoiseModel { seed: rng.random(), p, mode: NoiseMode::ScaledRandom };
    let yd = make_noisy(&y, delta, &model).map_err(|e| e.to_string())?;
    let s = lp_norm(&yd.sub(&y), p).map_err(|e| e.to_string())?;
    ensure!((s - delta).abs() <= 1e-12, "p = {p}, δ = {delta}: S = {s}");
    Ok(())
}
