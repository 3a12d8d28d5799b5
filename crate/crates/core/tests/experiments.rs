mod common;

use proptest::prelude::*;
use quasisol_core::config::{ErrorMeasure, ExactSpec, NoiseMode, Profile, RuleName, RuleSpec};
use quasisol_core::experiments::{emit_results, run_rate_study, verify_rate_bound, IndexFunction, OutputFormat, RateStudy};
use quasisol_core::forward::{ForwardProblem, SourceProblem};
use quasisol_core::grid::{Grid, GridFunction};
use quasisol_core::param_choice::{choose_rho, RhoRule, RhoVariant};
use quasisol_core::regularizer::Regularizer;
use quasisol_core::solver::{MisfitS, SolverOptions};
use quasisol_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{box_qp, dense_of, noisy, properties, to_vec};

fn rule(name: RuleName, tau: f64) -> RuleSpec {
    RuleSpec { rule: name, tau, rho_known: None, rho0: None, eps_rho: None, alpha_grid: None, penalty_power: None }
}

fn cosine() -> Profile {
    Profile::ClampedCosine { amplitude: 1.3, frequency: 2.0, clip: 1.0 }
}

fn source_study(n: usize, rule: RuleSpec, measure: ErrorMeasure, exact: ExactSpec, reg: Regularizer) -> RateStudy {
    let problem: Box<dyn ForwardProblem> = Box::new(SourceProblem::new(Grid::new_1d(n, 1.0).unwrap()).unwrap());
    let (x_true, source_w) = exact.build(problem.as_ref()).unwrap();
    RateStudy {
        id: "t".into(),
        problem,
        reg,
        rule,
        x_true,
        source_w,
        deltas: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
        trials: 3,
        seed: 4,
        measure,
        noise: NoiseMode::ScaledRandom,
        misfit: MisfitS::default(),
        opts: SolverOptions::default(),
        slope_window: None,
        monotone_slack: 0.2,
        r_tolerance: None,
        rate_bound: None,
        include_trace: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn noise_is_exact(seed in any::<u64>()) {
        let r = properties::noise_exact(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }
}

/// Rule II against a 200-point radius scan whose misfits come from the
/// dense box QP, independent of the iterative solver.
#[test]
fn rule_two_matches_radius_scan() {
    let g = Grid::new_1d(15, 1.0).unwrap();
    let problem = SourceProblem::new(g).unwrap();
    let x_true = cosine().on(&GridFunction::zeros(g)).unwrap();
    let y = problem.apply(&x_true).unwrap();
    let a = dense_of(|v| problem.apply(v).unwrap(), &x_true);
    let reg = Regularizer::sup();
    for (seed, delta) in [(1u64, 1e-2), (2, 3e-3), (3, 1e-3)] {
        let yd = noisy(&y, delta, seed);
        let tau = 1.5;
        let level = tau * delta;
        let misfit_at = |rho: f64| {
            let x = box_qp(&a, &to_vec(&yd), -rho, rho);
            ((&a * &x - to_vec(&yd)).norm_squared() * g.weight()).sqrt()
        };
        let grid: Vec<f64> = (1..=200).map(|k| k as f64 / 200.0 * 1.5).collect();
        let k = grid.iter().position(|&r| misfit_at(r) <= level).expect("scan brackets the radius");
        let rule = RhoRule { eps_rho: 1e-8, ..RhoRule::new(RhoVariant::II, tau, delta) };
        let sel = choose_rho(&rule, &problem, &reg, &yd, MisfitS::default(), &SolverOptions::default()).unwrap();
        let lower = if k == 0 { 0.0 } else { grid[k - 1] };
        assert!(
            sel.rho_star > lower - 1e-8 && sel.rho_star <= grid[k] + 1e-8,
            "δ = {delta}: ρ* = {} outside ({lower}, {}]",
            sel.rho_star,
            grid[k]
        );
        assert!(sel.solution.misfit <= level * (1.0 + 1e-9));
    }
}

#[test]
fn rule_two_radius_decreases_with_level() {
    let g = Grid::new_1d(31, 1.0).unwrap();
    let problem = SourceProblem::new(g).unwrap();
    let x_true = cosine().on(&GridFunction::zeros(g)).unwrap();
    let yd = noisy(&problem.apply(&x_true).unwrap(), 1e-3, 9);
    let mut last = f64::INFINITY;
    for tau in [1.0, 1.5, 2.0, 3.0, 5.0] {
        let rule = RhoRule::new(RhoVariant::II, tau, 1e-3);
        let sel = choose_rho(&rule, &problem, &Regularizer::sup(), &yd, MisfitS::default(), &SolverOptions::default()).unwrap();
        assert!(sel.rho_star <= last + rule.eps_rho, "τ = {tau}: ρ* = {} after {last}", sel.rho_star);
        last = sel.rho_star;
    }
}

#[test]
fn relations_hold_for_every_radius_rule() {
    for (name, tau) in [(RuleName::I, 1.0), (RuleName::II, 2.0), (RuleName::III, 2.0), (RuleName::Morozov, 2.0)] {
        let mut study = source_study(31, rule(name, tau), ErrorMeasure::Hminus1, ExactSpec::Profile(cosine()), Regularizer::sup());
        // at δ = 0.1 the noise exceeds ||y|| and rule III can be infeasible
        study.deltas.remove(0);
        let rep = run_rate_study(&study, 1).unwrap();
        for r in &rep.rows {
            let rel = r.relations.as_ref().unwrap_or_else(|| panic!("{name:?} δ = {}: {:?}", r.delta, r.failure));
            assert!(rel.all_passed, "{name:?} δ = {} trial {}: {rel:?}", r.delta, r.trial);
        }
        assert!(rep.all_passed, "{name:?}: {:?}", rep.assertions);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut blobs = Vec::new();
    for jobs in [1, 3, 1] {
        let study = source_study(31, rule(RuleName::III, 2.0), ErrorMeasure::L2, ExactSpec::Profile(cosine()), Regularizer::sup());
        let rep = run_rate_study(&study, jobs).unwrap();
        let mut blob = Vec::new();
        for (k, format) in [OutputFormat::Csv, OutputFormat::Json].into_iter().enumerate() {
            let path = dir.path().join(format!("out{k}"));
            emit_results(std::slice::from_ref(&rep), &path, format).unwrap();
            blob.extend(std::fs::read(&path).unwrap());
        }
        blobs.push(blob);
    }
    assert_eq!(blobs[0], blobs[1]);
    assert_eq!(blobs[0], blobs[2]);
}

#[test]
fn degenerate_and_failing_studies() {
    let mut study = source_study(15, rule(RuleName::II, 1.0), ErrorMeasure::L2, ExactSpec::Profile(cosine()), Regularizer::sup());
    study.deltas = vec![1e-2; 5];
    assert!(matches!(run_rate_study(&study, 1), Err(Error::DegenerateFit(_))));
    study.deltas = vec![1e-2, 1e-3, 1e-4];
    assert!(matches!(run_rate_study(&study, 1), Err(Error::Config(_))));

    // a start radius far above R(x†) already fits the data below δ, so rule III has no band
    let mut bad = rule(RuleName::III, 2.0);
    bad.rho0 = Some(1e3);
    let study = source_study(15, bad, ErrorMeasure::L2, ExactSpec::Profile(cosine()), Regularizer::sup());
    assert!(matches!(run_rate_study(&study, 1), Err(Error::StudyFailure(_))));
}

#[test]
fn bregman_rate_bound_with_source_condition() {
    let w = Profile::Sine { offset: 0.0, amplitude: 1000.0, frequency: 2.0 };
    let study = source_study(31, rule(RuleName::II, 2.0), ErrorMeasure::Bregman, ExactSpec::AdjointImage(w), Regularizer::l2());
    let rep = run_rate_study(&study, 1).unwrap();
    let (x_true, wv) = (&study.x_true, study.source_w.as_ref().unwrap());
    let c1 = wv.norm() / x_true.norm();
    let linear = verify_rate_bound(&rep, 0.0, IndexFunction { c: c1, kappa: 1.0 }, 1.0, 2.0).unwrap();
    assert!(linear.all_passed, "{:?}", linear.rows);
    let t = 3.0 * study.deltas[0];
    let sqrt = verify_rate_bound(&rep, 0.0, IndexFunction { c: c1 * t.sqrt(), kappa: 0.5 }, 1.0, 2.0).unwrap();
    assert!(sqrt.all_passed, "{:?}", sqrt.rows);
    assert!(rep.rows.iter().all(|r| r.error_value >= -1e-12));
    // the bound is not vacuous: a constant a thousand times smaller fails somewhere
    let tight = verify_rate_bound(&rep, 0.0, IndexFunction { c: c1 * 1e-3, kappa: 1.0 }, 1.0, 2.0).unwrap();
    assert!(!tight.all_passed);
    assert!(matches!(verify_rate_bound(&rep, 1.0, IndexFunction { c: c1, kappa: 1.0 }, 1.0, 2.0), Err(Error::Domain(_))));
}
