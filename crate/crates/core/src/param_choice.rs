//! Radius choice rules for Ivanov regularization and the relations they are
//! expected to satisfy against an exact solution.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::forward::ForwardProblem;
use crate::grid::GridFunction;
use crate::regularizer::Regularizer;
use crate::solver::{
    ivanov_solve, morozov_solve, radius_search, tikhonov_solve, BisectionStep, MisfitS, RadiusTarget, RegSolution,
    SolverOptions, DISCREPANCY_FLOOR,
};

/// Slack on `S <= δ` for the known-radius rule.
pub const RULE_I_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RhoVariant {
    /// `ρ = R(x†)`, supplied by the caller.
    I,
    /// Smallest `ρ` with misfit `<= τδ`.
    II,
    /// Any `ρ >= ρ0` with misfit in `(δ, τδ]`.
    III,
    /// Same search as `II`, reported as the residual method.
    #[serde(rename = "morozov")]
    Morozov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoRule {
    pub variant: RhoVariant,
    pub tau: f64,
    pub delta: f64,
    pub rho_known: Option<f64>,
    pub rho0: f64,
    pub eps_rho: f64,
}

impl RhoRule {
    /// Rule with `ρ0 = 0` and `ε_ρ = 1e-6`.
    pub fn new(variant: RhoVariant, tau: f64, delta: f64) -> Self {
        Self { variant, tau, delta, rho_known: None, rho0: 0.0, eps_rho: default_eps_rho(1.0) }
    }

    pub fn known(rho_known: f64, delta: f64) -> Self {
        Self { rho_known: Some(rho_known), ..Self::new(RhoVariant::I, 1.0, delta) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) {
            return domain(format!("τ must be >= 1, got {}", self.tau));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return domain(format!("noise level must be finite and >= 0, got {}", self.delta));
        }
        if !(self.eps_rho > 0.0) || !(self.rho0 >= 0.0) {
            return domain(format!("need ε_ρ > 0 and ρ0 >= 0, got {} and {}", self.eps_rho, self.rho0));
        }
        match self.variant {
            RhoVariant::I => match self.rho_known {
                Some(r) if r >= 0.0 => Ok(()),
                _ => Err(Error::Config("rule I needs rho_known = R(x†) >= 0".into())),
            },
            RhoVariant::III if self.tau == 1.0 => {
                Err(Error::Config("rule III needs τ > 1; the band (δ, δ] is empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// Discrepancy bound the selected solution must meet.
    pub fn level(&self) -> f64 {
        match self.variant {
            RhoVariant::I => self.delta,
            _ => (self.tau * self.delta).max(DISCREPANCY_FLOOR),
        }
    }
}

/// `1e-6 · max(1, scale)` where `scale` is a typical size of `R`.
pub fn default_eps_rho(scale: f64) -> f64 {
    1e-6 * scale.abs().max(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoSelection {
    pub rho_star: f64,
    pub solution: RegSolution,
    pub rule: RhoRule,
    pub bisection_trace: Vec<BisectionStep>,
    /// Misfits along the trace were non-increasing in `ρ`. A `false` here on a
    /// nonconvex instance is a warning, not a failure.
    pub monotone: bool,
}

pub fn choose_rho(
    rule: &RhoRule,
    problem: &dyn ForwardProblem,
    reg: &Regularizer,
    ydelta: &GridFunction,
    misfit: MisfitS,
    opts: &SolverOptions,
) -> Result<RhoSelection> {
    rule.validate()?;
    let (rho_star, solution, bisection_trace, monotone) = match rule.variant {
        RhoVariant::I => {
            let rho = rule.rho_known.expect("validated");
            let sol = ivanov_solve(problem, reg, rho, ydelta, misfit, opts, None)?;
            if sol.misfit > rule.delta + RULE_I_SLACK {
                return Err(Error::Infeasible(format!(
                    "misfit {:.6e} at ρ = R(x†) = {rho} exceeds δ = {:.6e}",
                    sol.misfit, rule.delta
                )));
            }
            let trace = vec![BisectionStep { rho, misfit: sol.misfit }];
            (rho, sol, trace, true)
        }
        RhoVariant::II => {
            let target = RadiusTarget::Smallest { level: rule.level() };
            let out = radius_search(problem, reg, ydelta, misfit, target, 0.0, rule.eps_rho, opts)?;
            (out.rho, out.solution, out.trace, out.monotone)
        }
        RhoVariant::III => {
            let target = RadiusTarget::Band { floor: rule.delta, level: rule.level() };
            let out = radius_search(problem, reg, ydelta, misfit, target, rule.rho0, rule.eps_rho, opts)?;
            (out.rho, out.solution, out.trace, out.monotone)
        }
        RhoVariant::Morozov => {
            let out = morozov_solve(problem, reg, rule.tau, rule.delta, ydelta, misfit, rule.eps_rho, opts)?;
            (out.rho, out.solution, out.trace, out.monotone)
        }
    };
    Ok(RhoSelection { rho_star, solution, rule: *rule, bisection_trace, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `bound - value`; negative on failure.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub checks: Vec<RelationCheck>,
    pub all_passed: bool,
}

impl RelationReport {
    fn push(&mut self, name: &str, value: f64, bound: f64) {
        self.push_with(name, value, bound, value <= bound);
    }

    fn push_with(&mut self, name: &str, value: f64, bound: f64, passed: bool) {
        self.all_passed &= passed;
        self.checks.push(RelationCheck { name: name.into(), value, bound, margin: bound - value, passed });
    }
}

/// Slack on `R(x̂) <= R(x†)`.
pub const R_SLACK: f64 = 1e-6;

/// Checks a selection against an exact solution `x†`:
/// `R(x̂) <= R(x†)`, the rule's discrepancy bound, `ρ* <= R(x†)` and, for
/// rule III, `S > δ`. Monotonicity of the bisection trace is reported too.
pub fn verify_relations(
    selection: &RhoSelection,
    x_true: &GridFunction,
    reg: &Regularizer,
    misfit: MisfitS,
    problem: &dyn ForwardProblem,
    ydelta: &GridFunction,
) -> Result<RelationReport> {
    let rule = &selection.rule;
    let x = &selection.solution.x;
    let r_true = reg.value(x_true);
    let s = misfit.value(&problem.apply(x)?, ydelta)?;
    let mut report = RelationReport { checks: Vec::new(), all_passed: true };
    report.push("r_bound", reg.value(x), r_true + R_SLACK);
    report.push("discrepancy", s, rule.level() + RULE_I_SLACK);
    if matches!(rule.variant, RhoVariant::II | RhoVariant::III | RhoVariant::Morozov) {
        report.push("radius", selection.rho_star, r_true + rule.eps_rho);
    }
    if rule.variant == RhoVariant::III {
        // S > δ, stored as -S against -δ so the margin keeps its sign convention
        report.push_with("band_floor", -s, -rule.delta, s > rule.delta);
    }
    report.push("monotone_trace", if selection.monotone { 0.0 } else { 1.0 }, 0.0);
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub solution: RegSolution,
    /// `(α, misfit)` for every α solved, largest first.
    pub scanned: Vec<(f64, f64)>,
}

/// Discrepancy principle for Tikhonov: the largest α of the grid whose
/// minimizer has misfit `<= τδ`.
#[allow(clippy::too_many_arguments)]
pub fn tikhonov_discrepancy(
    problem: &dyn ForwardProblem,
    reg: &Regularizer,
    penalty_power: u32,
    alpha_grid: &[f64],
    tau: f64,
    delta: f64,
    ydelta: &GridFunction,
    misfit: MisfitS,
    opts: &SolverOptions,
) -> Result<AlphaSelection> {
    if !(tau >= 1.0) || !(delta >= 0.0) {
        return domain(format!("need τ >= 1 and δ >= 0, got {tau} and {delta}"));
    }
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::Config("alpha_grid must be a nonempty list of positive numbers".into()));
    }
    let level = (tau * delta).max(DISCREPANCY_FLOOR);
    let mut grid = alpha_grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    let mut scanned = Vec::with_capacity(grid.len());
    let mut warm: Option<GridFunction> = None;
    for alpha in grid {
        let sol = tikhonov_solve(problem, reg, alpha, penalty_power, ydelta, misfit, opts, warm.as_ref())?;
        scanned.push((alpha, sol.misfit));
        if misfit.within(&problem.apply(&sol.x)?, ydelta, level) {
            return Ok(AlphaSelection { alpha, solution: sol, scanned });
        }
        warm = Some(sol.x);
    }
    Err(Error::Infeasible(format!("no α in the grid brings the misfit below {level:.6e}")))
}
