//! JSON configuration: one document with problem, regularizer, rule, solver
//! and study sections, plus the builders that turn it into library objects.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    BoundaryValues, BoxConstraint, CubicShift, DiffusionProblem1d, ForwardProblem, KernelProblem, PotentialProblem,
    SourceProblem,
};
use crate::grid::{Grid, GridFunction, Support};
use crate::param_choice::{default_eps_rho, RhoRule, RhoVariant};
use crate::regularizer::{Regularizer, RegularizerKind};
use crate::solver::SolverOptions;

/// Closed-form function of position used for exact solutions, sources and centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `offset + amplitude · sin(frequency π x)`, times `sin(frequency π y)` in 2D.
    Sine {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
    /// `clamp(amplitude · cos(frequency π x), -clip, clip)`.
    ClampedCosine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        clip: f64,
    },
    /// `values[i]` on `[breaks[i-1], breaks[i])`, with `values.len() == breaks.len() + 1`.
    PiecewiseConstant {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
    /// Explicit nodal (or cell) values.
    Values {
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl Profile {
    fn eval(&self, x: f64, y: Option<f64>) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Sine { offset, amplitude, frequency } => {
                let s = (frequency * PI * x).sin() * y.map_or(1.0, |y| (frequency * PI * y).sin());
                offset + amplitude * s
            }
            Profile::ClampedCosine { amplitude, frequency, clip } => {
                (amplitude * (frequency * PI * x).cos()).clamp(-clip, *clip)
            }
            Profile::PiecewiseConstant { breaks, values } => {
                let k = breaks.iter().take_while(|b| x >= **b).count();
                values[k]
            }
            Profile::Values { .. } => unreachable!("explicit values are not sampled"),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Profile::PiecewiseConstant { breaks, values } if values.len() != breaks.len() + 1 => {
                Err(Error::Config(format!("piecewise profile needs {} values, got {}", breaks.len() + 1, values.len())))
            }
            Profile::PiecewiseConstant { breaks, .. } if breaks.windows(2).any(|w| w[0] >= w[1]) => {
                Err(Error::Config("piecewise profile breaks must be increasing".into()))
            }
            Profile::ClampedCosine { clip, .. } if !(*clip >= 0.0) => Err(Error::Config("clip must be >= 0".into())),
            _ => Ok(()),
        }
    }

    /// Samples the profile in the space of `template` (nodes or cells).
    pub fn on(&self, template: &GridFunction) -> Result<GridFunction> {
        self.validate()?;
        let grid = *template.grid();
        if let Profile::Values { values } = self {
            return GridFunction::with_support(grid, template.support(), values.clone());
        }
        Ok(match template.support() {
            Support::Cells => GridFunction::sample_cells(grid, |x| self.eval(x, None)),
            Support::Nodes if grid.dim() == 2 => GridFunction::sample(grid, |x, y| self.eval(x, Some(y))),
            Support::Nodes => GridFunction::sample(grid, |x, _| self.eval(x, None)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: f64,
    pub right: f64,
}

impl From<BoundarySpec> for BoundaryValues {
    fn from(b: BoundarySpec) -> Self {
        BoundaryValues { left: b.left, right: b.right }
    }
}

fn default_dim() -> usize {
    1
}

fn default_length() -> f64 {
    1.0
}

fn unit_source() -> Profile {
    Profile::Constant { value: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// `-Δu = x` with homogeneous Dirichlet data.
    Source {
        n: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_length")]
        length: f64,
    },
    /// `-Δu + c u = f`, `u = g` on the boundary; unknown `c >= 0`.
    Potential {
        n: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "unit_source")]
        f: Profile,
        boundary: BoundarySpec,
    },
    /// `-(a u')' = f` on `(0, 1)`; unknown cellwise `a` in `[lower, upper]`.
    Diffusion {
        n: usize,
        #[serde(default = "unit_source")]
        f: Profile,
        boundary: BoundarySpec,
        lower: f64,
        upper: f64,
    },
    /// `x ↦ ∫ Φ(s - t) ((x(t) - x0)^3 + y) dt`; `n = 0` is the scalar case,
    /// `sigma = 0` the identity kernel.
    Kernel {
        #[serde(default)]
        n: usize,
        #[serde(default)]
        sigma: f64,
        x0: f64,
        #[serde(default)]
        y: f64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn ForwardProblem>> {
        Ok(match self {
            ProblemSpec::Source { n, dim, length } => Box::new(SourceProblem::new(Grid::new(*dim, *n, *length)?)?),
            ProblemSpec::Potential { n, dim, f, boundary } => {
                let g = Grid::new(*dim, *n, 1.0)?;
                let f = f.on(&GridFunction::zeros(g))?;
                Box::new(PotentialProblem::new(f, (*boundary).into())?)
            }
            ProblemSpec::Diffusion { n, f, boundary, lower, upper } => {
                let g = Grid::new_1d(*n, 1.0)?;
                let f = f.on(&GridFunction::zeros(g))?;
                Box::new(DiffusionProblem1d::new(f, (*boundary).into(), BoxConstraint::new(*lower, *upper)?)?)
            }
            ProblemSpec::Kernel { n, sigma, x0, y } => {
                let cubic = CubicShift { x0: *x0, y: *y };
                if *n == 0 {
                    Box::new(KernelProblem::identity(Grid::point(), cubic))
                } else if *sigma == 0.0 {
                    Box::new(KernelProblem::identity(Grid::new_1d(*n, 1.0)?, cubic))
                } else {
                    Box::new(KernelProblem::gaussian(Grid::new_1d(*n, 1.0)?, *sigma, cubic)?)
                }
            }
        })
    }
}

/// Exact solution `x†`: a profile, or `F'(0)^* w` for a linear problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactSpec {
    Profile(Profile),
    /// `x† = A^* w`, the classical source condition for linear `F = A`.
    AdjointImage(Profile),
}

impl ExactSpec {
    /// `(x†, w)`; `w` is present for `AdjointImage`.
    pub fn build(&self, problem: &dyn ForwardProblem) -> Result<(GridFunction, Option<GridFunction>)> {
        let zero = problem.parameter_zero();
        match self {
            ExactSpec::Profile(p) => Ok((p.on(&zero)?, None)),
            ExactSpec::AdjointImage(p) => {
                if !problem.is_linear() {
                    return Err(Error::Config(format!("adjoint_image needs a linear problem, {} is not", problem.name())));
                }
                let w = p.on(&GridFunction::zeros(problem.data_grid()))?;
                let x = problem.jac_adjoint_apply(&zero, &w)?;
                Ok((x, Some(w)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    #[serde(flatten)]
    pub kind: RegularizerKind,
    #[serde(default)]
    pub center: Option<Profile>,
}

impl RegularizerSpec {
    pub fn build(&self, problem: &dyn ForwardProblem) -> Result<Regularizer> {
        let center = match &self.center {
            Some(p) => Some(p.on(&problem.parameter_zero())?),
            None => None,
        };
        Regularizer::new(self.kind, center)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleName {
    I,
    II,
    III,
    #[serde(rename = "morozov")]
    Morozov,
    #[serde(rename = "tikhonov_discrepancy")]
    TikhonovDiscrepancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule: RuleName,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub rho_known: Option<f64>,
    #[serde(default)]
    pub rho0: Option<f64>,
    #[serde(default)]
    pub eps_rho: Option<f64>,
    #[serde(default)]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub penalty_power: Option<u32>,
}

impl RuleSpec {
    pub fn label(&self) -> &'static str {
        match self.rule {
            RuleName::I => "I",
            RuleName::II => "II",
            RuleName::III => "III",
            RuleName::Morozov => "morozov",
            RuleName::TikhonovDiscrepancy => "tikhonov_discrepancy",
        }
    }

    /// Radius rule for noise level `delta`. `r_true` fills in `rho_known` for
    /// rule I and sets the scale of the default `ε_ρ`.
    pub fn rho_rule(&self, delta: f64, r_true: Option<f64>) -> Result<RhoRule> {
        let variant = match self.rule {
            RuleName::I => RhoVariant::I,
            RuleName::II => RhoVariant::II,
            RuleName::III => RhoVariant::III,
            RuleName::Morozov => RhoVariant::Morozov,
            RuleName::TikhonovDiscrepancy => {
                return Err(Error::Config("tikhonov_discrepancy is not a radius rule".into()));
            }
        };
        let rho_known = self.rho_known.or(if variant == RhoVariant::I { r_true } else { None });
        let rule = RhoRule {
            variant,
            tau: self.tau,
            delta,
            rho_known,
            rho0: self.rho0.unwrap_or(0.0),
            eps_rho: self.eps_rho.unwrap_or_else(|| default_eps_rho(r_true.or(rho_known).unwrap_or(1.0))),
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// A single value or a list in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Explicit list, or `points` values geometric from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sequence {
    List(Vec<f64>),
    Geometric { from: f64, to: f64, points: usize },
}

impl Sequence {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Sequence::List(v) => Ok(v.clone()),
            Sequence::Geometric { from, to, points } => geometric(*from, *to, *points),
        }
    }
}

/// `points` values from `from` to `to` equally spaced in log scale, inclusive.
pub fn geometric(from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    if !(from > 0.0 && to > 0.0) || points < 2 {
        return Err(Error::Config(format!("geometric sequence needs positive ends and >= 2 points, got {from}, {to}, {points}")));
    }
    let (a, b) = (from.ln(), to.ln());
    Ok((0..points)
        .map(|k| match k {
            0 => from,
            k if k + 1 == points => to,
            k => (a + (b - a) * k as f64 / (points - 1) as f64).exp(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    ScaledRandom,
    ConstantShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMeasure {
    /// `sqrt(vᵀ A⁻¹ v)` with the discrete Dirichlet Laplacian `A`.
    Hminus1,
    L2,
    Lp { p: f64 },
    /// Bregman distance of `R` at `x†`.
    Bregman,
}

impl ErrorMeasure {
    pub fn label(&self) -> String {
        match self {
            ErrorMeasure::Hminus1 => "hminus1".into(),
            ErrorMeasure::L2 => "l2".into(),
            ErrorMeasure::Lp { p } => format!("l{p}"),
            ErrorMeasure::Bregman => "bregman".into(),
        }
    }
}

fn default_trials() -> usize {
    5
}

fn default_misfit_p() -> f64 {
    2.0
}

fn default_mode() -> NoiseMode {
    NoiseMode::ScaledRandom
}

fn default_slack() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub id: String,
    pub x_true: ExactSpec,
    pub deltas: Sequence,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub error_measure: ErrorMeasure,
    #[serde(default = "default_mode")]
    pub noise: NoiseMode,
    #[serde(default = "default_misfit_p")]
    pub misfit_p: f64,
    /// Asserted window for the fitted log-log slope.
    #[serde(default)]
    pub slope_window: Option<[f64; 2]>,
    /// Allowed relative rise of the mean error from one δ to the next.
    #[serde(default = "default_slack")]
    pub monotone_slack: f64,
    /// Asserted bound on `|R(x̂) - R(x†)| / R(x†)` at the smallest δ.
    #[serde(default)]
    pub r_tolerance: Option<f64>,
    /// Asserted rate bound; requires the Bregman error measure.
    #[serde(default)]
    pub rate_bound: Option<RateBoundSpec>,
    #[serde(default)]
    pub include_trace: bool,
}

/// `φ(t) = c t^κ` and the constants of the rate bound `D <= φ(C_S (τ+1) δ) / (1 - β)`.
/// A missing `c` is taken from the source element: `||w|| / ||x†||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBoundSpec {
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "one")]
    pub c_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub problem: ProblemSpec,
    pub regularizer: RegularizerSpec,
    pub rule: OneOrMany<RuleSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
    pub study: StudySpec,
}

fn default_alpha_grid() -> Sequence {
    Sequence::Geometric { from: 1e-4, to: 1e2, points: 20 }
}

fn default_curve_alphas() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}

fn default_curve_points() -> usize {
    401
}

fn default_samples() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CounterexampleSetting {
    Scalar,
    Kernel {
        n: usize,
        sigma: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSpec {
    pub deltas: Vec<f64>,
    pub x0: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Sequence,
    pub setting: CounterexampleSetting,
    #[serde(default = "default_curve_alphas")]
    pub curve_alphas: Vec<f64>,
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleConfig {
    pub counterexample: CounterexampleSpec,
    #[serde(default)]
    pub solver: Option<SolverOptions>,
}

/// One Ivanov/Morozov/Tikhonov solve at a given noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSpec {
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub noise: NoiseMode,
    #[serde(default = "default_misfit_p")]
    pub misfit_p: f64,
    /// Exact solution generating the data; its `R` value feeds rule I.
    pub x_true: ExactSpec,
    #[serde(default)]
    pub include_trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub problem: ProblemSpec,
    pub regularizer: RegularizerSpec,
    pub rule: RuleSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    pub solve: SolveSpec,
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let value = serde_json::from_str(&text)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_grid_hits_both_ends() {
        let g = geometric(1e-4, 1e2, 20).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[19]), (1e-4, 1e2));
        assert!(g.windows(2).all(|w| (w[1] / w[0] - 10f64.powf(6.0 / 19.0)).abs() < 1e-12));
        assert!(geometric(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn study_config_round_trip() {
        let text = r#"{
            "problem": {"kind": "source", "n": 63},
            "regularizer": {"kind": "sup"},
            "rule": [{"rule": "II"}, {"rule": "III", "tau": 2.0}],
            "study": {
                "id": "src",
                "x_true": {"profile": {"kind": "clamped_cosine", "amplitude": 1.3, "frequency": 2.0, "clip": 1.0}},
                "deltas": {"from": 0.1, "to": 0.001, "points": 5},
                "error_measure": "hminus1",
                "slope_window": [0.4, 0.65]
            }
        }"#;
        let cfg: StudyConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.rule.to_vec().len(), 2);
        assert_eq!(cfg.study.trials, 5);
        assert_eq!(cfg.study.deltas.values().unwrap().len(), 5);
        assert_eq!(cfg.solver.max_iter, SolverOptions::default().max_iter);
        let back: StudyConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let p = cfg.problem.build().unwrap();
        let (x, w) = cfg.study.x_true.build(p.as_ref()).unwrap();
        assert!(w.is_none());
        assert_eq!(x.max(), 1.0);
    }

    #[test]
    fn regularizer_spec_with_center() {
        let spec: RegularizerSpec =
            serde_json::from_str(r#"{"kind": "bv1d", "anchor_weight": 1.0, "center": {"kind": "constant", "value": 1.0}}"#).unwrap();
        let p = ProblemSpec::Diffusion {
            n: 15,
            f: unit_source(),
            boundary: BoundarySpec { left: 0.0, right: 1.0 },
            lower: 0.25,
            upper: 4.0,
        }
        .build()
        .unwrap();
        let reg = spec.build(p.as_ref()).unwrap();
        assert_eq!(reg.value(&GridFunction::cells_constant(p.data_grid(), 1.0)), 0.0);
    }

    #[test]
    fn rule_spec_defaults_and_errors() {
        let spec: RuleSpec = serde_json::from_str(r#"{"rule": "I"}"#).unwrap();
        let rule = spec.rho_rule(0.01, Some(3.0)).unwrap();
        assert_eq!(rule.rho_known, Some(3.0));
        assert!((rule.eps_rho - 3e-6).abs() < 1e-18);
        assert!(spec.rho_rule(0.01, None).is_err());
        let bad: RuleSpec = serde_json::from_str(r#"{"rule": "III", "tau": 1.0}"#).unwrap();
        assert!(matches!(bad.rho_rule(0.01, None), Err(Error::Config(_))));
        let piecewise = Profile::PiecewiseConstant { breaks: vec![0.3], values: vec![1.0] };
        assert!(piecewise.on(&GridFunction::zeros(Grid::new_1d(3, 1.0).unwrap())).is_err());
    }
}
