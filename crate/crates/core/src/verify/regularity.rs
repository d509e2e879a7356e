use serde::Serialize;

use crate::forward::PathBundle;
use crate::solver::{DiscreteSolution, UTable};
use crate::stats::{ols_slope, quantile};
use crate::{Error, Result};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct URegularityReport {
    pub rho: f64,
    pub alpha: f64,
    /// Normalised space increments over adjacent state pairs.
    pub space_ratios: Vec<f64>,
    /// Largest space ratio: the fitted constant.
    pub fitted_constant: f64,
    pub median_ratio: f64,
    /// Fitted Hölder exponent in time, `None` when `u` does not vary in time.
    pub time_exponent: Option<f64>,
    pub skipped_cells: usize,
    pub max_over_median: f64,
    pub pass: bool,
}

/// Normalised increments `|u(t,x) − u(t,x')| / ((1 + (|x|∨|x'|)^ρ) |x − x'|^α)`
/// over adjacent lattice states, and a log-log fit of the time increments.
/// Passes when the largest space ratio is within `max_over_median` of the
/// median (no blow-up) and the time exponent is positive.
pub fn u_regularity_check(table: &UTable, rho: f64, alpha: f64, max_over_median: f64) -> Result<URegularityReport> {
    let lat = &table.lattice;
    if lat.times.len() < 2 || lat.states.len() < 2 {
        return Err(Error::Precondition("regularity needs at least two times and two states".into()));
    }
    if !(rho >= 0.0) || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("need ρ ≥ 0 and α in (0, 1], got ρ={rho}, α={alpha}")));
    }
    let mut space_ratios = Vec::new();
    for ti in 0..lat.times.len() {
        for xi in 0..lat.states.len() - 1 {
            let (Some(a), Some(b)) = (table.value(ti, xi), table.value(ti, xi + 1)) else {
                continue;
            };
            let (x, x2) = (&lat.states[xi], &lat.states[xi + 1]);
            let weight = 1.0 + norm(x).max(norm(x2)).powf(rho);
            space_ratios.push((a - b).abs() / (weight * dist(x, x2).powf(alpha)));
        }
    }
    let (mut lags, mut incs) = (Vec::new(), Vec::new());
    for xi in 0..lat.states.len() {
        let weight = 1.0 + norm(&lat.states[xi]).powf(rho);
        for ti in 0..lat.times.len() {
            for tj in ti + 1..lat.times.len() {
                let (Some(a), Some(b)) = (table.value(ti, xi), table.value(tj, xi)) else {
                    continue;
                };
                let inc = (a - b).abs() / weight;
                if inc > 0.0 {
                    lags.push((lat.times[tj] - lat.times[ti]).abs().ln());
                    incs.push(inc.ln());
                }
            }
        }
    }
    let distinct_lags = lags.iter().any(|l| (l - lags[0]).abs() > 1e-12);
    let time_exponent = (incs.len() >= 2 && distinct_lags).then(|| ols_slope(&lags, &incs));
    let fitted_constant = space_ratios.iter().copied().fold(0.0, f64::max);
    let median_ratio = quantile(&space_ratios, 0.5);
    let bounded = fitted_constant == 0.0 || (median_ratio > 0.0 && fitted_constant <= max_over_median * median_ratio);
    let time_ok = incs.is_empty() || time_exponent.is_some_and(|e| e > 0.0);
    Ok(URegularityReport {
        rho,
        alpha,
        space_ratios,
        fitted_constant,
        median_ratio,
        time_exponent,
        skipped_cells: table.invalid_cells(),
        max_over_median,
        pass: bounded && time_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSpreadReport {
    pub cells: usize,
    /// Largest `|u_1 − u_k| / sqrt(se_1² + se_k²)` over cells and seeds.
    pub worst_score: f64,
    pub failures: usize,
    pub pass: bool,
}

/// Every valid cell agrees across seeds within `k` combined standard errors.
pub fn u_seed_spread_check(table: &UTable, k: f64) -> SeedSpreadReport {
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut cells = 0;
    for c in table.cells.iter().filter(|c| c.is_valid() && c.values.len() >= 2) {
        cells += 1;
        for s in 1..c.values.len() {
            let diff = (c.values[0] - c.values[s]).abs();
            let se = c.std_errors[0].hypot(c.std_errors[s]);
            let score = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(score);
            if score > k {
                failures += 1;
            }
        }
    }
    SeedSpreadReport {
        cells,
        worst_score: worst,
        failures,
        pass: failures == 0,
    }
}

/// Tail statistics of one growth ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthTail {
    pub fitted_constant: f64,
    pub median: f64,
    pub q999: f64,
    pub pass: bool,
}

impl GrowthTail {
    fn from_ratios(r: &[f64]) -> Self {
        let fitted_constant = r.iter().copied().fold(0.0, f64::max);
        let median = quantile(r, 0.5);
        let q999 = quantile(r, 0.999);
        Self {
            fitted_constant,
            median,
            q999,
            pass: q999 <= 2.0 * median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZGrowthReport {
    pub rho: f64,
    pub z: GrowthTail,
    pub psi: GrowthTail,
    pub pass: bool,
}

/// Ratios `|Z|/(1 + |X|^{1+ρ})` and `‖ψ‖_{L²(ν)}/(1 + |X_−|^{1+ρ})` over
/// nodes and paths; each passes when its 99.9% quantile is within a factor 2
/// of its median.
pub fn z_growth_check(solution: &DiscreteSolution, bundle: &PathBundle, rho: f64) -> Result<ZGrowthReport> {
    if solution.grid != *bundle.grid() || solution.n_paths() != bundle.n_paths() {
        return Err(Error::Precondition("solution and path bundle are not aligned".into()));
    }
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("ρ must be nonnegative, got {rho}")));
    }
    let marks = bundle.marks();
    let n = solution.grid.n_steps();
    let paths = solution.n_paths();
    let cap = (n - solution.start_node) * paths;
    let (mut zr, mut pr) = (Vec::with_capacity(cap), Vec::with_capacity(cap));
    for i in solution.start_node..n {
        for p in 0..paths {
            let w = 1.0 + norm(bundle.state(i, p)).powf(1.0 + rho);
            zr.push(norm(solution.z.get(i, p)) / w);
            pr.push(marks.l2_norm_sq(solution.psi.get(i, p)).sqrt() / w + 0.0);
        }
    }
    let z = GrowthTail::from_ratios(&zr);
    let psi = GrowthTail::from_ratios(&pr);
    let pass = z.pass && psi.pass;
    Ok(ZGrowthReport { rho, z, psi, pass })
}
