use super::config::{InitialGuess, SolverConfig};
use super::solution::DiscreteSolution;
use super::sweep::{window_bounds, SweepContext};
use crate::condexp::RegressionBasis;
use crate::driver::{BoundParamsA, DriverSpec};
use crate::field::NodeField;
use crate::forward::PathBundle;
use crate::verify::universal_bound_y;
use crate::{Error, Result};

/// Solve window by window backward from the horizon, iterating the
/// anticipated argument to a fixed point on each window while the already
/// solved later windows stay frozen.
pub fn solve_windowed(
    bundle: &PathBundle,
    driver: &DriverSpec,
    config: &SolverConfig,
    basis: &RegressionBasis,
    guess: InitialGuess,
) -> Result<DiscreteSolution> {
    let grid = bundle.grid();
    config.validate(grid.horizon())?;
    let h = config.window.unwrap_or(grid.horizon());
    let bounds = window_bounds(grid, h)?;
    let ctx = SweepContext::new(bundle, driver, basis)?;
    let mut sol = ctx.empty_solution();
    for (lo, hi) in bounds {
        let trace = ctx.solve_window(&mut sol, lo, hi, config, guess)?;
        sol.traces.push(trace);
    }
    Ok(sol)
}

/// Picard iteration for a globally Lipschitz anticipated driver, started
/// from `(Y, Z, ψ) ≡ 0`.
pub fn solve_lipschitz_absde(
    bundle: &PathBundle,
    driver: &DriverSpec,
    config: &SolverConfig,
    basis: &RegressionBasis,
) -> Result<DiscreteSolution> {
    if !driver.is_globally_lipschitz() {
        return Err(Error::Precondition(format!(
            "driver {} is not flagged globally Lipschitz; regularise it first",
            driver.name()
        )));
    }
    solve_windowed(bundle, driver, config, basis, InitialGuess::Zero)
}

/// Largest `h = T / 2^k` for which the outer map on the last window contracts
/// by at most one half.
///
/// The contraction factor is estimated as `sup |Φ(U) − Φ(0)| / U`, where
/// `Φ(q)` is one sweep with the anticipated argument frozen at the constant
/// path `q` and `U` is the a priori bound on `|Y|` (or 1 when that is zero or
/// unavailable).
pub fn pick_window(
    driver: &DriverSpec,
    bundle: &PathBundle,
    config: &SolverConfig,
    basis: &RegressionBasis,
) -> Result<f64> {
    let grid = bundle.grid();
    config.validate(grid.horizon())?;
    let ctx = SweepContext::new(bundle, driver, basis)?;
    let level = probe_level(driver, grid.horizon());
    let mut h = grid.horizon();
    loop {
        let (lo, hi) = window_bounds(grid, h)?[0];
        if driver.functional().is_none() {
            return Ok(h);
        }
        let mut a = ctx.empty_solution();
        let mut b = ctx.empty_solution();
        let mut prev = a.y.clone();
        fill(&mut prev, lo, hi, 0.0);
        ctx.sweep_range(&mut a, &prev, lo, hi)?;
        fill(&mut prev, lo, hi, level);
        ctx.sweep_range(&mut b, &prev, lo, hi)?;
        let mut diff: f64 = 0.0;
        for i in lo..hi {
            for (x, y) in a.y.node(i).iter().zip(b.y.node(i)) {
                diff = diff.max((x - y).abs());
            }
        }
        if diff / level <= 0.5 {
            return Ok(h);
        }
        h *= 0.5;
        if h < grid.min_step() * (1.0 - 1e-9) {
            return Err(Error::WindowTooSmall {
                h,
                min_step: grid.min_step(),
            });
        }
    }
}

fn fill(field: &mut NodeField, lo: usize, hi: usize, v: f64) {
    for i in lo..hi {
        field.node_mut(i).fill(v);
    }
}

fn probe_level(driver: &DriverSpec, horizon: f64) -> f64 {
    let terminal = driver.terminal();
    if !terminal.is_bounded() {
        return 1.0;
    }
    BoundParamsA::new(terminal.sup(), *driver.structure(), horizon)
        .and_then(|a| universal_bound_y(&a))
        .ok()
        .filter(|u| *u > 0.0 && u.is_finite())
        .unwrap_or(1.0)
}
