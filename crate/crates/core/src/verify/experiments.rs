use serde::Serialize;

use super::bounds::{universal_bound_y, universal_bound_z_psi, BoundEvaluation};
use crate::condexp::RegressionBasis;
use crate::driver::{BoundParamsA, DriverInput, DriverSpec, ProbeSet};
use crate::field::NodeField;
use crate::forward::PathBundle;
use crate::norms::NormReport;
use crate::solver::{
    solve_lipschitz_absde, solve_qexp_absde, solve_windowed, sup_distance, CascadeReport, DiscreteSolution,
    InitialGuess, SolverConfig,
};
use crate::stats::{ols_slope, ordered_sum};
use crate::{Error, Result};

/// Solve with the Picard solver when the driver is globally Lipschitz and
/// with the truncation cascade otherwise.
pub fn solve_scenario(
    bundle: &PathBundle,
    driver: &DriverSpec,
    config: &SolverConfig,
    basis: &RegressionBasis,
) -> Result<(DiscreteSolution, Option<CascadeReport>)> {
    if driver.is_globally_lipschitz() {
        Ok((solve_lipschitz_absde(bundle, driver, config, basis)?, None))
    } else {
        let (sol, report) = solve_qexp_absde(bundle, driver, config, basis)?;
        Ok((sol, Some(report)))
    }
}

/// The three universal bounds against the empirical norms. The `Z` and `ψ`
/// formulas are evaluated at the empirical `S∞` estimate.
pub fn check_universal_bounds(report: &NormReport, a: &BoundParamsA) -> Result<Vec<BoundEvaluation>> {
    let y_bound = universal_bound_y(a)?;
    let (z2, psi2) = universal_bound_z_psi(a, report.s_inf)?;
    Ok(vec![
        BoundEvaluation::new("Y_sup", report.s_inf, y_bound, 0.0),
        BoundEvaluation::new("Z_bmo", report.h2_bmo_sq, z2, 0.0),
        BoundEvaluation::new("psi_bmo", report.j2_bmo_sq, psi2, 0.0),
    ])
}

/// `(mean over paths of sup over nodes |a − b|^p)^{1/p}` on nodes `lo..=N`.
pub fn sp_distance(a: &NodeField, b: &NodeField, lo: usize, p: f64) -> f64 {
    let paths = a.paths();
    let hi = a.nodes();
    let s = ordered_sum(paths, |q| {
        (lo..hi)
            .map(|i| (a.value(i, q) - b.value(i, q)).abs())
            .fold(0.0, f64::max)
            .powf(p)
    });
    (s / paths as f64).powf(1.0 / p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub p: f64,
    pub eps: Vec<f64>,
    /// `‖Y^ε − Y‖_{S^p}` per `ε`.
    pub distances: Vec<f64>,
    /// Least-squares slope of `log ‖δY‖` against `log ε` over the positive `ε`.
    pub slope: f64,
    /// Every `ε = 0` entry reproduced the base solution exactly.
    pub zero_exact: bool,
    pub pass: bool,
}

/// First-order stability: solves the base problem and `perturb(ε)` for each
/// `ε` on the same bundle and fits the log-log slope of the `S^p` distance.
/// Passes when the slope lies in `[0.85, 1.15]` and `ε = 0` gives exactly zero.
pub fn stability_experiment<F>(
    bundle: &PathBundle,
    base: &DriverSpec,
    perturb: F,
    eps: &[f64],
    p: f64,
    config: &SolverConfig,
    basis: &RegressionBasis,
) -> Result<StabilityReport>
where
    F: Fn(f64) -> Result<DriverSpec>,
{
    if eps.len() < 3 {
        return Err(Error::invalid(format!("stability needs at least 3 perturbation sizes, got {}", eps.len())));
    }
    if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) || !(p >= 1.0) {
        return Err(Error::invalid("perturbation sizes must be nonnegative and p at least 1"));
    }
    let (reference, _) = solve_scenario(bundle, base, config, basis)?;
    let mut distances = Vec::with_capacity(eps.len());
    for &e in eps {
        let (sol, _) = solve_scenario(bundle, &perturb(e)?, config, basis)?;
        distances.push(sp_distance(&sol.y, &reference.y, reference.start_node, p));
    }
    let zero_exact = eps.iter().zip(&distances).filter(|(e, _)| **e == 0.0).all(|(_, d)| *d == 0.0);
    let (lx, ly): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(&distances)
        .filter(|(e, d)| **e > 0.0 && **d > 0.0)
        .map(|(e, d)| (e.ln(), d.ln()))
        .unzip();
    let slope = if lx.len() >= 2 { ols_slope(&lx, &ly) } else { f64::NAN };
    Ok(StabilityReport {
        p,
        eps: eps.to_vec(),
        distances,
        slope,
        zero_exact,
        pass: zero_exact && (0.85..=1.15).contains(&slope),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub lower: String,
    pub upper: String,
    /// Probe points where `ξ¹ > ξ²` or `f¹ > f²`.
    pub precondition_violations: usize,
    /// `max (Y¹ − Y²)₊` over nodes and paths.
    pub max_violation: f64,
    pub noise_floor: f64,
    pub pass: bool,
}

/// Probe `ξ¹ ≤ ξ²` (at the probes and at every terminal state of the bundle)
/// and `f¹ ≤ f²` at the probes.
pub fn comparison_preconditions(lower: &DriverSpec, upper: &DriverSpec, bundle: &PathBundle, probes: &ProbeSet) -> usize {
    let grid = bundle.grid();
    let n = grid.n_steps();
    let mut bad = (0..bundle.n_paths())
        .filter(|&p| {
            let x = bundle.state(n, p);
            lower.terminal().eval(x) > upper.terminal().eval(x)
        })
        .count();
    for pr in &probes.probes {
        if lower.terminal().eval(&pr.x) > upper.terminal().eval(&pr.x) {
            bad += 1;
        }
        let input = |a: f64| DriverInput {
            t: pr.t,
            x: &pr.x,
            anticipated: a,
            y: pr.y,
            z: &pr.z,
            psi: &pr.psi,
        };
        let f1 = lower.evaluate(&input(lower.anticipated_value(grid, pr.node, &pr.path)));
        let f2 = upper.evaluate(&input(upper.anticipated_value(grid, pr.node, &pr.path)));
        if !(f1 <= f2) {
            bad += 1;
        }
    }
    bad
}

/// Solves an ordered pair on one bundle and reports the largest violation of
/// `Y¹ ≤ Y²`. The noise floor defaults to `10⁻³` of the larger `S∞`.
pub fn comparison_experiment(
    bundle: &PathBundle,
    lower: &DriverSpec,
    upper: &DriverSpec,
    probes: &ProbeSet,
    noise_floor: Option<f64>,
    config: &SolverConfig,
    basis: &RegressionBasis,
) -> Result<ComparisonReport> {
    if !upper.functional().is_none() && !upper.is_monotone_in_q() {
        return Err(Error::Precondition(format!(
            "upper driver {} is anticipated but not flagged nondecreasing in its anticipated argument",
            upper.name()
        )));
    }
    let precondition_violations = comparison_preconditions(lower, upper, bundle, probes);
    if precondition_violations > 0 {
        return Err(Error::Precondition(format!(
            "pair ({}, {}) is not ordered at {precondition_violations} probe points",
            lower.name(),
            upper.name()
        )));
    }
    let (s1, _) = solve_scenario(bundle, lower, config, basis)?;
    let (s2, _) = solve_scenario(bundle, upper, config, basis)?;
    let lo = s1.start_node;
    let max_violation = (lo..s1.y.nodes())
        .flat_map(|i| s1.y.node(i).iter().zip(s2.y.node(i)).map(|(a, b)| (a - b).max(0.0)))
        .fold(0.0, f64::max);
    let noise_floor = noise_floor.unwrap_or(1e-3 * s1.y_sup().max(s2.y_sup()));
    Ok(ComparisonReport {
        lower: lower.name().to_string(),
        upper: upper.name().to_string(),
        precondition_violations,
        max_violation,
        noise_floor,
        pass: max_violation <= noise_floor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub start_high: f64,
    pub distance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs the windowed fixed point from `0` and from the universal `Y` bound;
/// each run is driven to a quarter of the tolerance, so the two limits must
/// agree within the tolerance.
pub fn uniqueness_proxy(
    bundle: &PathBundle,
    driver: &DriverSpec,
    config: &SolverConfig,
    basis: &RegressionBasis,
) -> Result<UniquenessReport> {
    let a = BoundParamsA::new(driver.terminal().sup(), *driver.structure(), bundle.grid().horizon())?;
    let start_high = universal_bound_y(&a)?;
    let tight = SolverConfig {
        tolerance: config.tolerance / 4.0,
        ..config.clone()
    };
    let from_zero = solve_windowed(bundle, driver, &tight, basis, InitialGuess::Zero)?;
    let from_high = solve_windowed(bundle, driver, &tight, basis, InitialGuess::Constant(start_high))?;
    let distance = sup_distance(&from_zero.y, &from_high.y);
    Ok(UniquenessReport {
        start_high,
        distance,
        tolerance: config.tolerance,
        pass: distance <= config.tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MConvergenceReport {
    pub distances: Vec<f64>,
    pub nonincreasing: bool,
    pub last: f64,
    pub eps_fix: f64,
    pub warning: Option<String>,
    pub pass: bool,
}

/// Successive cascade distances must be nonincreasing with the last below `eps_fix`.
pub fn m_convergence_check(report: &CascadeReport, eps_fix: f64) -> MConvergenceReport {
    let d = &report.distances;
    if d.is_empty() {
        return MConvergenceReport {
            distances: Vec::new(),
            nonincreasing: true,
            last: 0.0,
            eps_fix,
            warning: Some("single cascade level: nothing to compare".into()),
            pass: true,
        };
    }
    let nonincreasing = d.windows(2).all(|w| w[1] <= w[0]);
    let last = d[d.len() - 1];
    let warning = (report.levels.len() < 3).then(|| format!("only {} cascade levels", report.levels.len()));
    MConvergenceReport {
        distances: d.clone(),
        nonincreasing,
        last,
        eps_fix,
        warning,
        pass: nonincreasing && last < eps_fix,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    pub windows: usize,
    /// Largest ratio of successive distances over the second half of each trace.
    pub worst_tail_ratio: f64,
    pub pass: bool,
}

/// Picard traces are eventually geometric: on every window the ratios over
/// the second half of the trace stay below `max_ratio < 1`. Traces that hit
/// zero pass trivially.
pub fn picard_trace_check(solution: &DiscreteSolution, max_ratio: f64) -> PicardReport {
    let mut worst = 0.0f64;
    let mut pass = true;
    for t in &solution.traces {
        let r = t.ratios();
        let tail = &r[r.len() / 2..];
        let w = tail.iter().copied().fold(0.0, f64::max);
        worst = worst.max(w);
        pass &= t.converged && w <= max_ratio;
    }
    PicardReport {
        windows: solution.traces.len(),
        worst_tail_ratio: worst,
        pass,
    }
}
