use std::sync::Arc;

use super::*;
use crate::condexp::RegressionBasis;
use crate::driver::{regularize_driver, scenarios, AnticipatedFunctional, TerminalCondition};
use crate::field::NodeField;
use crate::forward::{simulate_paths, ForwardModel, MarkMeasureSpec, PathBundle, Start, TimeGrid};
use crate::Error;

fn bundle(model: &ForwardModel, marks: &MarkMeasureSpec, t: f64, n: usize, paths: usize, seed: u64) -> PathBundle {
    let grid = TimeGrid::uniform(t, n).unwrap();
    simulate_paths(model, &grid, marks, &Start::origin(vec![0.0]), paths, seed).unwrap()
}

fn no_marks() -> Arc<MarkMeasureSpec> {
    Arc::new(MarkMeasureSpec::none())
}

fn jump_marks() -> Arc<MarkMeasureSpec> {
    Arc::new(MarkMeasureSpec::single(0.2, &[(0.5, 0.6), (-1.0, 0.4)]).unwrap())
}

fn cfg() -> SolverConfig {
    SolverConfig {
        tolerance: 1e-10,
        ..SolverConfig::default()
    }
}

#[test]
fn zero_driver_constant_terminal() {
    let marks = jump_marks();
    let model = ForwardModel::arithmetic_brownian(0.1, 1.0).with_additive_jumps(1.0);
    let b = bundle(&model, &marks, 1.0, 20, 2000, 1);
    let f = scenarios::zero(TerminalCondition::constant(0.75), marks, 1).unwrap();
    let sol = solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    assert!(sol.y.as_slice().iter().all(|v| *v == 0.75));
    assert!(sol.z.as_slice().iter().all(|v| *v == 0.0));
    assert!(sol.psi.as_slice().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn terminal_node_is_exact() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 10, 500, 2);
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    let (sol, _) = solve_qexp_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    for p in 0..500 {
        assert_eq!(sol.y.value(10, p), b.state(10, p)[0].sin());
    }
}

#[test]
fn linear_decay_matches_exponential() {
    let model = ForwardModel::zero(1, 1);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 100, 64, 3);
    let f = scenarios::linear_y(-1.0, TerminalCondition::constant(1.0), no_marks(), 1).unwrap();
    let sol = solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    let y0 = sol.initial_value();
    assert!((y0 / (-1.0f64).exp() - 1.0).abs() < 0.01, "{y0}");
}

#[test]
fn linear_growth_matches_exponential() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 100, 1000, 4);
    let f = scenarios::linear_y(1.0, TerminalCondition::constant(1.0), no_marks(), 1).unwrap();
    let sol = solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    assert!((sol.initial_value() / 1f64.exp() - 1.0).abs() < 0.01);
}

#[test]
fn anticipated_sup_matches_exponential() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 100, 1000, 5);
    let c = 1.0;
    let f = scenarios::anticipated_sup(0.5, 0.0, TerminalCondition::constant(c), no_marks(), 1).unwrap();
    let sol = solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    assert!((sol.initial_value() / (c * 0.5f64.exp()) - 1.0).abs() < 0.01);
    let trace = &sol.traces[0];
    assert!(trace.converged);
    let r = trace.ratios();
    assert!(r.last().unwrap() < &0.5, "{trace:?}");
}

#[test]
fn deferred_value_matches_piecewise_ode() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 100, 500, 6);
    let (c, theta) = (2.0, 0.4);
    let f = scenarios::deferred_value(theta, 1.0, TerminalCondition::constant(c), no_marks(), 1).unwrap();
    let sol = solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    let node = b.grid().node_at(1.0 - theta / 2.0).unwrap();
    let oracle = c * (1.0 + theta / 2.0);
    assert!((sol.y.value(node, 0) / oracle - 1.0).abs() < 0.01);
}

#[test]
fn brownian_identity_gives_unit_z_and_idempotent_sweep() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 20, 20_000, 7);
    let f = scenarios::zero(TerminalCondition::identity(), no_marks(), 1).unwrap();
    let sol = solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    for i in [0usize, 5, 15] {
        for p in (0..20_000).step_by(1999) {
            assert!((sol.y.value(i, p) - b.state(i, p)[0]).abs() < 0.02);
        }
    }
    let zbar = crate::stats::MeanEstimate::from_fn(20_000, |p| sol.z.value(10, p));
    assert!((zbar.mean - 1.0).abs() < 0.05, "{zbar:?}");
    let again = backward_sweep(&b, &f, &sol.y, &RegressionBasis::default()).unwrap();
    assert!(sup_distance(&again.y, &sol.y) < 1e-12);
}

#[test]
fn second_sweep_changes_nothing_without_anticipation() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 10, 2000, 8);
    let f = scenarios::linear_y(0.3, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    let zero = NodeField::zeros(11, 2000, 1);
    let first = backward_sweep(&b, &f, &zero, &RegressionBasis::default()).unwrap();
    let second = backward_sweep(&b, &f, &first.y, &RegressionBasis::default()).unwrap();
    assert_eq!(sup_distance(&first.y, &second.y), 0.0);
}

#[test]
fn entropic_cole_hopf() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 50, 20_000, 9);
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    let basis = RegressionBasis::piecewise_linear(32, 1e-8).unwrap();
    let mut config = cfg();
    config.early_stop = false;
    let (sol, report) = solve_qexp_absde(&b, &f, &config, &basis).unwrap();
    let mean_exp = crate::stats::MeanEstimate::from_fn(20_000, |p| b.state(50, p)[0].sin().exp());
    let oracle = mean_exp.mean.ln();
    assert!((sol.initial_value() - oracle).abs() / oracle.abs() < 0.02, "{} vs {oracle}", sol.initial_value());
    assert!(report.distances.windows(2).all(|w| w[1] <= w[0]), "{report:?}");
    assert!(*report.distances.last().unwrap() < 1e-3, "{report:?}");
}

#[test]
fn small_gamma_constant_terminal_is_exact_at_every_level() {
    let marks = jump_marks();
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0).with_additive_jumps(1.0);
    let b = bundle(&model, &marks, 1.0, 10, 1000, 10);
    let f = scenarios::entropic(1e-3, TerminalCondition::constant(0.4), marks, 1).unwrap();
    let mut config = cfg();
    config.early_stop = false;
    config.schedule = vec![1.0, 2.0, 4.0, 8.0];
    let (sol, report) = solve_qexp_absde(&b, &f, &config, &RegressionBasis::default()).unwrap();
    assert!(sol.y.as_slice().iter().all(|v| *v == 0.4));
    assert!(report.distances.iter().all(|d| *d == 0.0));
    assert!(report.initial_values.iter().all(|v| *v == 0.4));
}

#[test]
fn cascade_settles_once_truncation_is_inert() {
    let marks = Arc::new(MarkMeasureSpec::single(0.5, &[(0.5, 0.5), (1.0, 0.5)]).unwrap());
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0).with_additive_jumps(0.5);
    let b = bundle(&model, &marks, 1.0, 20, 20_000, 11);
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), marks, 1).unwrap();
    let mut config = cfg();
    config.early_stop = false;
    config.schedule = vec![1.0, 2.0, 4.0, 8.0];
    let basis = RegressionBasis::piecewise_linear(16, 1e-8).unwrap();
    let (_, report) = solve_qexp_absde(&b, &f, &config, &basis).unwrap();
    assert_eq!(report.levels.len(), 4);
    let n = report.distances.len();
    assert!(report.distances[n - 1] < config.tolerance && report.distances[n - 2] < config.tolerance, "{report:?}");
}

#[test]
fn early_stop_truncates_schedule() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 10, 1000, 12);
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    let basis = RegressionBasis::piecewise_linear(16, 1e-8).unwrap();
    let (_, report) = solve_qexp_absde(&b, &f, &cfg(), &basis).unwrap();
    assert!(report.stopped_early, "{report:?}");
    assert!(report.levels.len() < 4, "{report:?}");
    assert!(*report.distances.last().unwrap() < cfg().tolerance);
}

#[test]
fn structure_violation_is_rejected() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 10, 100, 13);
    let f = scenarios::linear_y(2.0, TerminalCondition::constant(1.0), no_marks(), 1)
        .unwrap()
        .with_name("mislabelled");
    let bad = crate::driver::DriverSpec::new(
        "steep",
        f.generator().clone(),
        crate::driver::StructureParams::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        TerminalCondition::constant(1.0),
        no_marks(),
        1,
    )
    .unwrap();
    assert!(matches!(
        solve_qexp_absde(&b, &bad, &cfg(), &RegressionBasis::default()),
        Err(Error::StructureViolation(_))
    ));
}

#[test]
fn non_lipschitz_driver_is_rejected_by_picard() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 10, 100, 14);
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    assert!(matches!(
        solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()),
        Err(Error::Precondition(_))
    ));
    let fm = regularize_driver(&f, 3.0).unwrap();
    assert!(solve_lipschitz_absde(&b, &fm, &cfg(), &RegressionBasis::default()).is_ok());
}

#[test]
fn non_convergence_carries_trace() {
    let model = ForwardModel::zero(1, 1);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 20, 10, 15);
    let f = scenarios::anticipated_sup(2.0, 0.0, TerminalCondition::constant(1.0), no_marks(), 1).unwrap();
    let mut config = cfg();
    config.max_iter = 3;
    match solve_lipschitz_absde(&b, &f, &config, &RegressionBasis::default()) {
        Err(Error::NonConvergence { trace, .. }) => assert_eq!(trace.len(), 3),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn pick_window_rules() {
    let model = ForwardModel::zero(1, 1);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 100, 10, 16);
    let basis = RegressionBasis::default();
    let zero = scenarios::zero(TerminalCondition::constant(1.0), no_marks(), 1).unwrap();
    assert_eq!(pick_window(&zero, &b, &cfg(), &basis).unwrap(), 1.0);
    let mild = scenarios::anticipated_sup(0.4, 0.0, TerminalCondition::constant(1.0), no_marks(), 1).unwrap();
    assert_eq!(pick_window(&mild, &b, &cfg(), &basis).unwrap(), 1.0);
    let steep = scenarios::anticipated_sup(4.0, 0.0, TerminalCondition::constant(1.0), no_marks(), 1).unwrap();
    let h = pick_window(&steep, &b, &cfg(), &basis).unwrap();
    assert!(h <= 1.0 / 8.0, "{h}");
    // The chosen window yields a contracting trace.
    let mut config = cfg();
    config.window = Some(h);
    let sol = solve_lipschitz_absde(&b, &steep, &config, &basis).unwrap();
    for t in &sol.traces {
        assert!(t.ratios().iter().all(|r| *r <= 0.5), "{t:?}");
    }
    // A constant solution of y' = −δ y backward: Y_0 ≈ e^{δT}.
    assert!((sol.initial_value() / 4f64.exp() - 1.0).abs() < 0.1);
}

#[test]
fn window_too_small_is_reported() {
    let model = ForwardModel::zero(1, 1);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 4, 10, 17);
    // Reading the current node keeps even a one-step window implicit.
    let current = AnticipatedFunctional::Custom {
        name: "current_abs".into(),
        eval: Arc::new(|future, _| future[0].abs()),
        lipschitz: 1.0,
    };
    let steep = scenarios::anticipated_sup(400.0, 0.0, TerminalCondition::constant(1.0), no_marks(), 1)
        .unwrap()
        .with_functional(current);
    assert!(matches!(
        pick_window(&steep, &b, &cfg(), &RegressionBasis::default()),
        Err(Error::WindowTooSmall { .. })
    ));
}

#[test]
fn frozen_prefix_is_constant() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let grid = TimeGrid::uniform(1.0, 10).unwrap();
    let b = simulate_paths(&model, &grid, &MarkMeasureSpec::none(), &Start::new(0.4, vec![0.3]), 2000, 18).unwrap();
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    let mut config = cfg();
    config.window = Some(0.25);
    let (sol, _) = solve_qexp_absde(&b, &f, &config, &RegressionBasis::default()).unwrap();
    let start = b.start_node();
    assert_eq!(start, 4);
    let y_t = sol.y.value(start, 0);
    for i in 0..=start {
        for p in 0..2000 {
            assert_eq!(sol.y.value(i, p), y_t);
            if i < start {
                assert!(sol.z.get(i, p).iter().all(|v| *v == 0.0));
            }
        }
    }
    assert_eq!(sol.initial_value(), y_t);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let marks = jump_marks();
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0).with_additive_jumps(0.5);
    let run = || {
        let b = bundle(&model, &marks, 1.0, 10, 5000, 19);
        let f = scenarios::anticipated_sup(0.5, 0.0, TerminalCondition::sine(1.0), marks.clone(), 1).unwrap();
        solve_lipschitz_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap()
    };
    let a = run();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(run);
    assert_eq!(a.y, b.y);
    assert_eq!(a.z, b.z);
    assert_eq!(a.psi, b.psi);
}

#[test]
fn u_map_trivial_cases() {
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let lattice = ULattice::scalar(vec![0.0, 0.5, 1.0], &[-1.0, 0.0, 2.0]);
    let basis = RegressionBasis::default();
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let constant = scenarios::zero(TerminalCondition::constant(0.3), no_marks(), 1).unwrap();
    let table = build_u_map(&constant, &model, &grid, &MarkMeasureSpec::none(), &basis, &cfg(), &lattice, 200, &[1]).unwrap();
    assert!(table.cells.iter().all(|c| c.values == vec![0.3]));
    // ξ(x) = x with zero dynamics; bounded surrogate for the identity on the lattice.
    let frozen = ForwardModel::zero(1, 1);
    let ident = TerminalCondition::new("clamped x", Arc::new(|x| x[0].clamp(-5.0, 5.0)), 5.0, 1.0, 1.0);
    let f = scenarios::zero(ident, no_marks(), 1).unwrap();
    let table = build_u_map(&f, &frozen, &grid, &MarkMeasureSpec::none(), &basis, &cfg(), &lattice, 50, &[2]).unwrap();
    for ti in 0..3 {
        for (xi, x) in [-1.0, 0.0, 2.0].iter().enumerate() {
            assert_eq!(table.value(ti, xi), Some(*x));
        }
    }
    let off = ULattice::scalar(vec![0.3], &[0.0]);
    assert!(build_u_map(&f, &frozen, &grid, &MarkMeasureSpec::none(), &basis, &cfg(), &off, 50, &[2]).is_err());
}

#[test]
fn u_map_is_deterministic_across_seeds() {
    let grid = TimeGrid::uniform(1.0, 10).unwrap();
    let lattice = ULattice::scalar(vec![0.0, 0.5], &[-1.0, 0.5]);
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    let table = build_u_map(&f, &model, &grid, &MarkMeasureSpec::none(), &RegressionBasis::default(), &cfg(), &lattice, 4000, &[1, 2])
        .unwrap();
    for c in &table.cells {
        let se = (c.std_errors[0].powi(2) + c.std_errors[1].powi(2)).sqrt();
        assert!((c.values[0] - c.values[1]).abs() <= 3.0 * se, "{c:?}");
    }
}

#[test]
fn markov_consistency_of_fitted_map() {
    let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
    let b = bundle(&model, &MarkMeasureSpec::none(), 1.0, 20, 5000, 20);
    let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), no_marks(), 1).unwrap();
    let (sol, _) = solve_qexp_absde(&b, &f, &cfg(), &RegressionBasis::default()).unwrap();
    for i in [3usize, 10, 17] {
        let fit = sol.y_fits[i].as_ref().unwrap();
        for p in (0..5000).step_by(313) {
            assert!((fit.predict(b.state(i, p)) - sol.y.value(i, p)).abs() < 1e-10);
        }
    }
}
