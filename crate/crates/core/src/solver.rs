//! Ivanov, Tikhonov and Morozov regularization as optimization routines.
//!
//! Ivanov and Tikhonov share one proximal-gradient engine on the smooth part
//! `½ S(F(x), y^δ)^2`: the Ivanov prox is the projection onto
//! `{R <= ρ} ∩ D(F)`, the Tikhonov prox that of `α R^q / q` restricted to
//! `D(F)`. Morozov is a bisection in `ρ` over Ivanov subproblems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::forward::{BoxConstraint, ForwardProblem};
use crate::grid::{lp_norm, GridFunction};
use crate::regularizer::Regularizer;

/// Discrepancy level used in place of `τδ` when `δ = 0`.
pub const DISCREPANCY_FLOOR: f64 = 1e-12;

/// `S(y1, y2) = ||y1 - y2||_{L^p, h}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisfitS {
    pub p: f64,
}

impl Default for MisfitS {
    fn default() -> Self {
        Self { p: 2.0 }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl MisfitS {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0) {
            return domain(format!("misfit exponent must satisfy 1 < p <= inf, got {p}"));
        }
        Ok(Self { p })
    }

    pub fn value(&self, a: &GridFunction, b: &GridFunction) -> Result<f64> {
        lp_norm(&a.sub(b), self.p)
    }

    /// Gradient of `½ S(fx, y)^2` with respect to `fx` in the weighted inner product.
    fn residual_gradient(&self, residual: &GridFunction) -> Result<GridFunction> {
        if self.p == 2.0 {
            return Ok(residual.clone());
        }
        if self.p.is_infinite() {
            return Err(Error::Config("the sup-norm misfit is not differentiable; use 1 < p < inf".into()));
        }
        let norm = lp_norm(residual, self.p)?;
        if norm == 0.0 {
            return Ok(residual.scale(0.0));
        }
        let c = norm.powf(2.0 - self.p);
        Ok(residual.map(|r| c * r.abs().powf(self.p - 1.0) * r.signum()))
    }

    /// `S(fx, y)^2` as an unevaluated sum `hi + lo` (exact to about 2^-100 relative) for `p = 2`.
    fn square_compensated(&self, fx: &GridFunction, y: &GridFunction) -> Result<(f64, f64)> {
        if self.p != 2.0 {
            let s = self.value(fx, y)?;
            return Ok((s * s, 0.0));
        }
        let (mut s, mut e) = (0.0, 0.0);
        for (a, b) in fx.values().iter().zip(y.values()) {
            let (hi, lo) = two_sum(*a, -*b);
            let (p, pe) = two_prod(hi, hi);
            let (s2, se) = two_sum(s, p);
            s = s2;
            e += se + pe + 2.0 * hi * lo + lo * lo;
        }
        let (sw, swe) = two_prod(s, fx.weight());
        Ok(two_sum(sw, swe + e * fx.weight()))
    }

    /// `S(fx, y) <= level`, decided with compensated arithmetic so that residual
    /// excesses far below the rounding unit of `level` are not lost.
    pub fn within(&self, fx: &GridFunction, y: &GridFunction, level: f64) -> bool {
        if self.p == 2.0 {
            let Ok((sw, ew)) = self.square_compensated(fx, y) else { return false };
            let (q, qe) = two_prod(level, level);
            let (d, de) = two_sum(sw, -q);
            return d + (de + ew - qe) <= 0.0;
        }
        if self.p.is_infinite() {
            return fx.values().iter().zip(y.values()).all(|(a, b)| {
                let (hi, lo) = two_sum(*a, -*b);
                let (d, de) = two_sum(hi.abs(), -level);
                d + de + hi.signum() * lo <= 0.0
            });
        }
        match self.value(fx, y) {
            Ok(s) => s <= level,
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub step_init: f64,
    /// Step reduction factor of the backtracking line search.
    pub backtrack: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Relative tolerance on the proximal-gradient residual.
    pub grad_tol: f64,
    /// Relative objective change regarded as stagnation.
    pub stagnation_tol: f64,
    pub multistart: usize,
    /// Half-width of the box around the start point sampled by restarts.
    pub multistart_scale: f64,
    pub seed: u64,
    pub keep_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            step_init: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            grad_tol: 1e-12,
            stagnation_tol: 1e-15,
            multistart: 1,
            multistart_scale: 1.0,
            seed: 0,
            keep_trace: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step_init, self.armijo, self.grad_tol, self.stagnation_tol, self.multistart_scale];
        if self.max_iter == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("solver options must be positive and finite".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.armijo < 1.0) {
            return Err(Error::Config("backtracking factor and Armijo constant must lie in (0, 1)".into()));
        }
        if !(1..=8).contains(&self.multistart) {
            return Err(Error::Config(format!("multistart must be between 1 and 8, got {}", self.multistart)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ivanov,
    Tikhonov,
    Morozov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub misfit: f64,
    pub r_value: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegSolution {
    pub method: Method,
    pub x: GridFunction,
    /// `S(F(x), y^δ)`
    pub misfit: f64,
    pub r_value: f64,
    /// `ρ`, `α` or `τδ` depending on the method.
    pub param: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final proximal-gradient residual `||x - prox(x - t∇)|| / t`.
    pub stationarity: f64,
    /// Set when the method's justification needs convexity the instance lacks.
    pub heuristic: bool,
    pub trace: Vec<TraceEntry>,
}

struct EngineOut {
    x: GridFunction,
    misfit: f64,
    objective: f64,
    exact_objective: (f64, f64),
    iterations: usize,
    converged: bool,
    stationarity: f64,
    trace: Vec<TraceEntry>,
}

struct Smooth<'a> {
    problem: &'a dyn ForwardProblem,
    ydelta: &'a GridFunction,
    misfit: MisfitS,
}

impl Smooth<'_> {
    /// `(½ S^2, S, F(x))` and, on request, the gradient of `½ S^2`.
    fn eval(&self, x: &GridFunction, gradient: bool) -> Result<(f64, f64, Option<GridFunction>)> {
        let e = self.problem.evaluate(x)?;
        let residual = e.output.sub(self.ydelta);
        let s = lp_norm(&residual, self.misfit.p)?;
        let g = if gradient {
            let rg = self.misfit.residual_gradient(&residual)?;
            Some(self.problem.jac_adjoint_apply_at(x, &e, &rg)?)
        } else {
            None
        };
        Ok((0.5 * s * s, s, g))
    }
}

/// Proximal gradient with Barzilai-Borwein trial steps and backtracking on the
/// composite sufficient-decrease condition.
fn prox_gradient(
    smooth: &Smooth<'_>,
    x0: GridFunction,
    prox: &dyn Fn(&GridFunction, f64) -> Result<GridFunction>,
    nonsmooth: &dyn Fn(&GridFunction) -> f64,
    r_of: &dyn Fn(&GridFunction) -> f64,
    opts: &SolverOptions,
) -> Result<EngineOut> {
    let mut x = x0;
    let (mut f, mut s, g) = smooth.eval(&x, true)?;
    let mut grad = g.expect("gradient requested");
    let mut gx = nonsmooth(&x);
    let mut trace = Vec::new();
    let push = |trace: &mut Vec<TraceEntry>, s: f64, x: &GridFunction, obj: f64| {
        if opts.keep_trace {
            trace.push(TraceEntry { misfit: s, r_value: r_of(x), objective: obj });
        }
    };
    push(&mut trace, s, &x, f + gx);
    let mut t = opts.step_init;
    let mut prev: Option<(GridFunction, GridFunction)> = None;
    let mut first_residual = None;
    let mut stationarity = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=opts.max_iter {
        if let Some((xp, gp)) = &prev {
            let sx = x.sub(xp);
            let sy = grad.sub(gp);
            let sty = sx.inner(&sy);
            let sts = sx.inner(&sx);
            if sty > 0.0 && sts > 0.0 {
                t = (sts / sty).clamp(1e-12, 1e12);
            } else {
                t = (t * 2.0).min(1e12);
            }
        }
        let phi = f + gx;
        let mut accepted = None;
        for _ in 0..80 {
            let z = prox(&x.axpy(-t, &grad), t)?;
            let d = z.sub(&x);
            let gz = nonsmooth(&z);
            let model = grad.inner(&d) + gz - gx;
            match smooth.eval(&z, false) {
                Ok((fz, sz, _)) if fz + gz <= phi + opts.armijo * model.min(0.0) => {
                    accepted = Some((z, d, fz, sz, gz));
                    break;
                }
                Ok(_) | Err(Error::Domain(_)) => t *= opts.backtrack,
                Err(e) => return Err(e),
            }
        }
        let Some((z, d, fz, sz, gz)) = accepted else {
            return Ok(EngineOut { x, misfit: s, objective: f + gx, exact_objective: (0.0, 0.0), iterations: it, converged: false, stationarity, trace });
        };
        stationarity = d.norm() / t;
        let scale = *first_residual.get_or_insert(stationarity);
        let decrease = phi - (fz + gz);
        let (_, _, gnew) = smooth.eval(&z, true)?;
        prev = Some((x, std::mem::replace(&mut grad, gnew.expect("gradient requested"))));
        x = z;
        f = fz;
        s = sz;
        gx = gz;
        push(&mut trace, s, &x, f + gx);
        if stationarity <= opts.grad_tol * (1.0 + scale) || d.max_abs() == 0.0 {
            return Ok(EngineOut { x, misfit: s, objective: f + gx, exact_objective: (0.0, 0.0), iterations: it, converged: true, stationarity, trace });
        }
        if decrease <= opts.stagnation_tol * (f + gx).abs().max(f64::MIN_POSITIVE) {
            stalled += 1;
            if stalled >= 10 {
                return Ok(EngineOut { x, misfit: s, objective: f + gx, exact_objective: (0.0, 0.0), iterations: it, converged: true, stationarity, trace });
            }
        } else {
            stalled = 0;
        }
    }
    Ok(EngineOut { x, misfit: s, objective: f + gx, exact_objective: (0.0, 0.0), iterations: opts.max_iter, converged: false, stationarity, trace })
}

/// Deterministic Latin-hypercube restart points around `base`, kept inside `D(F)`.
fn restart_points(base: &GridFunction, scale: f64, count: usize, seed: u64, bounds: Option<BoxConstraint>) -> Vec<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = base.len();
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut perm: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        strata.push(perm);
    }
    (0..count)
        .map(|k| {
            let v = (0..n)
                .map(|i| {
                    let u = (strata[i][k] as f64 + rng.random::<f64>()) / count as f64;
                    let val = base.values()[i] + scale * (2.0 * u - 1.0);
                    bounds.map_or(val, |b| b.clamp(val))
                })
                .collect();
            base.like(v)
        })
        .collect()
}

/// Objective `½ S^2 + penalty` as an unevaluated sum, so restarts whose
/// objectives agree to rounding are still ordered correctly.
fn compensated_objective(smooth: &Smooth<'_>, x: &GridFunction, penalty: f64) -> Result<(f64, f64)> {
    let fx = smooth.problem.apply(x)?;
    let (hi, lo) = smooth.misfit.square_compensated(&fx, smooth.ydelta)?;
    let (s, e) = two_sum(0.5 * hi, penalty);
    Ok((s, e + 0.5 * lo))
}

fn better(a: &EngineOut, ra: f64, b: &EngineOut, rb: f64) -> bool {
    let (d, de) = two_sum(a.exact_objective.0, -b.exact_objective.0);
    let diff = d + (de + a.exact_objective.1 - b.exact_objective.1);
    if diff != 0.0 {
        return diff < 0.0;
    }
    if ra != rb {
        return ra < rb;
    }
    a.x.values().iter().zip(b.x.values()).find(|(p, q)| p != q).is_some_and(|(p, q)| p < q)
}

fn check_data(problem: &dyn ForwardProblem, ydelta: &GridFunction) -> Result<()> {
    let expect = GridFunction::zeros(problem.data_grid());
    if !ydelta.same_space(&expect) {
        return domain(format!("data has {} values, {} expects {}", ydelta.len(), problem.name(), expect.len()));
    }
    Ok(())
}

/// `min S(F(x), y^δ)` subject to `R(x) <= ρ`, `x ∈ D(F)`.
pub fn ivanov_solve(
    problem: &dyn ForwardProblem,
    reg: &Regularizer,
    rho: f64,
    ydelta: &GridFunction,
    misfit: MisfitS,
    opts: &SolverOptions,
    x_init: Option<&GridFunction>,
) -> Result<RegSolution> {
    opts.validate()?;
    check_data(problem, ydelta)?;
    if !(rho >= 0.0) {
        return domain(format!("Ivanov radius must be >= 0, got {rho}"));
    }
    let bounds = problem.domain();
    let zero = problem.parameter_zero();
    let start = x_init.cloned().unwrap_or_else(|| reg.center_like(&zero));
    let project = |v: &GridFunction| match reg.project_within(v, rho, bounds.as_ref()) {
        Err(Error::Infeasible(m)) => Err(Error::Domain(format!("{{R <= {rho}}} ∩ D(F) is empty: {m}"))),
        other => other,
    };
    let x0 = project(&start)?;
    let smooth = Smooth { problem, ydelta, misfit };
    let prox = |v: &GridFunction, _t: f64| project(v);
    let r_of = |v: &GridFunction| reg.value(v);
    let mut starts = vec![x0.clone()];
    if opts.multistart > 1 {
        for p in restart_points(&x0, opts.multistart_scale, opts.multistart - 1, opts.seed, bounds) {
            starts.push(project(&p)?);
        }
    }
    let mut best: Option<EngineOut> = None;
    for s in starts {
        let mut out = prox_gradient(&smooth, s, &prox, &|_| 0.0, &r_of, opts)?;
        out.exact_objective = compensated_objective(&smooth, &out.x, 0.0)?;
        let replace = match &best {
            None => true,
            Some(b) => better(&out, reg.value(&out.x), b, reg.value(&b.x)),
        };
        if replace {
            best = Some(out);
        }
    }
    let out = best.expect("at least one start");
    Ok(RegSolution {
        method: Method::Ivanov,
        r_value: reg.value(&out.x),
        misfit: out.misfit,
        param: rho,
        objective: out.objective,
        iterations: out.iterations,
        converged: out.converged,
        stationarity: out.stationarity,
        heuristic: false,
        trace: out.trace,
        x: out.x,
    })
}

/// `min ½ S(F(x), y^δ)^2 + α R(x)^q / q` over `D(F)`.
pub fn tikhonov_solve(
    problem: &dyn ForwardProblem,
    reg: &Regularizer,
    alpha: f64,
    penalty_power: u32,
    ydelta: &GridFunction,
    misfit: MisfitS,
    opts: &SolverOptions,
    x_init: Option<&GridFunction>,
) -> Result<RegSolution> {
    opts.validate()?;
    check_data(problem, ydelta)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return domain(format!("Tikhonov parameter must be positive, got {alpha}"));
    }
    if penalty_power != 1 && penalty_power != 2 {
        return Err(Error::Config(format!("penalty power must be 1 or 2, got {penalty_power}")));
    }
    let bounds = problem.domain();
    let zero = problem.parameter_zero();
    let start = x_init.cloned().unwrap_or_else(|| reg.center_like(&zero));
    let x0 = match bounds {
        Some(b) => start.map(|v| b.clamp(v)),
        None => start,
    };
    let smooth = Smooth { problem, ydelta, misfit };
    let q = penalty_power as f64;
    let prox = |v: &GridFunction, t: f64| reg.prox(v, t * alpha, penalty_power, bounds.as_ref());
    let penalty = |v: &GridFunction| alpha * reg.value(v).powf(q) / q;
    let r_of = |v: &GridFunction| reg.value(v);
    let mut starts = vec![x0.clone()];
    if opts.multistart > 1 {
        starts.extend(restart_points(&x0, opts.multistart_scale, opts.multistart - 1, opts.seed, bounds));
    }
    let mut best: Option<EngineOut> = None;
    for s in starts {
        let mut out = prox_gradient(&smooth, s, &prox, &penalty, &r_of, opts)?;
        out.exact_objective = compensated_objective(&smooth, &out.x, penalty(&out.x))?;
        let replace = match &best {
            None => true,
            Some(b) => better(&out, reg.value(&out.x), b, reg.value(&b.x)),
        };
        if replace {
            best = Some(out);
        }
    }
    let out = best.expect("at least one start");
    Ok(RegSolution {
        method: Method::Tikhonov,
        r_value: reg.value(&out.x),
        misfit: out.misfit,
        param: alpha,
        objective: out.objective,
        iterations: out.iterations,
        converged: out.converged,
        stationarity: out.stationarity,
        heuristic: false,
        trace: out.trace,
        x: out.x,
    })
}

/// Where a radius search stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadiusTarget {
    /// Smallest `ρ` (within `ε_ρ`) with misfit `<= level`.
    Smallest { level: f64 },
    /// Any `ρ` with `floor < misfit <= level`.
    Band { floor: f64, level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub rho: f64,
    pub misfit: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadiusOutcome {
    pub rho: f64,
    pub solution: RegSolution,
    /// Every Ivanov solve of the search, in evaluation order.
    pub trace: Vec<BisectionStep>,
    /// Misfit was non-increasing in `ρ` over the trace (up to `1e-8`).
    pub monotone: bool,
}

/// Largest radius tried while looking for an upper bracket, in units of `ε_ρ`.
pub const BRACKET_CAP: f64 = 1_099_511_627_776.0; // 2^40

/// Radius search over Ivanov subproblems, warm-started from the nearest solved radius.
#[allow(clippy::too_many_arguments)]
pub fn radius_search(
    problem: &dyn ForwardProblem,
    reg: &Regularizer,
    ydelta: &GridFunction,
    misfit: MisfitS,
    target: RadiusTarget,
    rho_start: f64,
    eps_rho: f64,
    opts: &SolverOptions,
) -> Result<RadiusOutcome> {
    if !(eps_rho > 0.0) || !(rho_start >= 0.0) {
        return domain(format!("radius search needs ε_ρ > 0 and ρ0 >= 0, got {eps_rho}, {rho_start}"));
    }
    let mut trace = Vec::new();
    let mut solved: Vec<(f64, RegSolution)> = Vec::new();
    let mut solve = |rho: f64, trace: &mut Vec<BisectionStep>| -> Result<(RegSolution, GridFunction)> {
        let warm = solved
            .iter()
            .min_by(|a, b| (a.0 - rho).abs().total_cmp(&(b.0 - rho).abs()))
            .map(|(_, s)| s.x.clone());
        let sol = ivanov_solve(problem, reg, rho, ydelta, misfit, opts, warm.as_ref())?;
        let fx = problem.apply(&sol.x)?;
        trace.push(BisectionStep { rho, misfit: sol.misfit });
        solved.push((rho, sol.clone()));
        Ok((sol, fx))
    };
    let finish = |rho: f64, solution: RegSolution, trace: Vec<BisectionStep>| {
        let monotone = is_monotone(&trace);
        RadiusOutcome { rho, solution, trace, monotone }
    };
    let level = match target {
        RadiusTarget::Smallest { level } | RadiusTarget::Band { level, .. } => level,
    };
    let floor = match target {
        RadiusTarget::Band { floor, .. } => Some(floor),
        RadiusTarget::Smallest { .. } => None,
    };
    let in_band = |fx: &GridFunction| misfit.within(fx, ydelta, level) && floor.is_none_or(|f| !misfit.within(fx, ydelta, f));
    let below_floor = |fx: &GridFunction| floor.is_some_and(|f| misfit.within(fx, ydelta, f));

    let (sol0, fx0) = solve(rho_start, &mut trace)?;
    if in_band(&fx0) {
        return Ok(finish(rho_start, sol0, trace));
    }
    if below_floor(&fx0) {
        return Err(Error::Infeasible(format!(
            "misfit {:.6e} at ρ0 = {rho_start} is already <= δ; the band (δ, τδ] lies below ρ0",
            sol0.misfit
        )));
    }
    let cap = BRACKET_CAP * eps_rho;
    let mut lo = rho_start;
    let mut hi = rho_start.max(eps_rho);
    let (mut hi_sol, mut hi_fx) = if hi == rho_start { (sol0, fx0) } else { solve(hi, &mut trace)? };
    loop {
        if in_band(&hi_fx) && floor.is_some() {
            return Ok(finish(hi, hi_sol, trace));
        }
        if misfit.within(&hi_fx, ydelta, level) {
            break;
        }
        if hi >= cap {
            return Err(Error::Infeasible(format!(
                "no radius up to {cap:.3e} brings the misfit below {level:.6e} (last misfit {:.6e})",
                hi_sol.misfit
            )));
        }
        lo = hi;
        hi = (hi * 2.0).min(cap);
        (hi_sol, hi_fx) = solve(hi, &mut trace)?;
    }
    let resolution = if floor.is_some() { eps_rho * 1e-6 } else { eps_rho };
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (sol, fx) = solve(mid, &mut trace)?;
        if floor.is_some() && in_band(&fx) {
            return Ok(finish(mid, sol, trace));
        }
        if misfit.within(&fx, ydelta, level) {
            hi = mid;
            hi_sol = sol;
        } else {
            lo = mid;
        }
    }
    if floor.is_some() {
        return Err(Error::Infeasible(format!(
            "bisection closed on ρ ≈ {hi:.9e} without a misfit in ({:.6e}, {level:.6e}]",
            floor.unwrap_or(0.0)
        )));
    }
    Ok(finish(hi, hi_sol, trace))
}

fn is_monotone(trace: &[BisectionStep]) -> bool {
    let mut sorted = trace.to_vec();
    sorted.sort_by(|a, b| a.rho.total_cmp(&b.rho));
    sorted.windows(2).all(|w| w[1].misfit <= w[0].misfit + 1e-8)
}

/// `min R(x)` subject to `S(F(x), y^δ) <= τδ`, by bisection on the Ivanov radius.
/// `heuristic` marks nonlinear instances, where the reduction presumes a
/// monotone, continuous value function it cannot certify.
#[allow(clippy::too_many_arguments)]
pub fn morozov_solve(
    problem: &dyn ForwardProblem,
    reg: &Regularizer,
    tau: f64,
    delta: f64,
    ydelta: &GridFunction,
    misfit: MisfitS,
    eps_rho: f64,
    opts: &SolverOptions,
) -> Result<RadiusOutcome> {
    if !(tau >= 1.0) {
        return domain(format!("Morozov needs τ >= 1, got {tau}"));
    }
    if !(delta >= 0.0) {
        return domain(format!("noise level must be >= 0, got {delta}"));
    }
    let level = (tau * delta).max(DISCREPANCY_FLOOR);
    let mut out = radius_search(problem, reg, ydelta, misfit, RadiusTarget::Smallest { level }, 0.0, eps_rho, opts)?;
    out.solution.method = Method::Morozov;
    out.solution.param = level;
    out.solution.heuristic = !problem.is_linear();
    Ok(out)
}

/// Grid search on `n_grid + 1` equispaced points refined by golden section
/// to an interval of width `1e-10`; returns `(argmin, min)`.
pub fn scalar_oracle(objective: impl Fn(f64) -> f64, lo: f64, hi: f64, n_grid: usize) -> Result<(f64, f64)> {
    if !(lo < hi) || n_grid < 1000 {
        return domain(format!("scalar oracle needs lo < hi and n_grid >= 1000, got [{lo}, {hi}], {n_grid}"));
    }
    let step = (hi - lo) / n_grid as f64;
    let mut k_best = 0;
    let mut f_best = f64::INFINITY;
    for k in 0..=n_grid {
        let v = objective(lo + k as f64 * step);
        if v < f_best {
            f_best = v;
            k_best = k;
        }
    }
    let x_grid = lo + k_best as f64 * step;
    let (mut a, mut b) = ((x_grid - step).max(lo), (x_grid + step).min(hi));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-10 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let x_ref = 0.5 * (a + b);
    let f_ref = objective(x_ref);
    Ok(if f_ref <= f_best { (x_ref, f_ref) } else { (x_grid, f_best) })
}
