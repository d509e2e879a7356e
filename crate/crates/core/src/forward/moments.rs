use serde::Serialize;

use super::grid::TimeGrid;
use super::marks::MarkMeasureSpec;
use super::model::ForwardModel;
use super::paths::{simulate_paths, PathBundle, Start};
use crate::stats::MeanEstimate;
use crate::{Error, Result};

/// Two initial data compared under common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartPair {
    pub first: Start,
    pub second: Start,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentConfig {
    /// Even moment order `p >= 2`.
    pub p: u32,
    pub n_paths: usize,
    pub seed: u64,
    /// Window length `h` of the modulus-of-continuity moment.
    pub window: f64,
    /// A ratio above this value flags the pair.
    pub ceiling: f64,
    /// Allowed multiplicative drift of a ratio when `h` or `|x − x'|` halves.
    pub stability_factor: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            p: 2,
            n_paths: 10_000,
            seed: 1,
            window: 0.1,
            ceiling: 50.0,
            stability_factor: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentPairReport {
    pub pair: StartPair,
    /// `E sup_s |X_s^{t,x}|^p`.
    pub sup_moment: f64,
    pub sup_ratio: f64,
    /// `max_s E sup_{s ≤ u ≤ s+h} |X_s − X_u|^p` at `h` and `h / 2`.
    pub modulus_moment: f64,
    pub modulus_moment_half: f64,
    pub modulus_ratio: f64,
    pub modulus_ratio_half: f64,
    /// `E sup_s |X_s^{t,x} − X_s^{t',x'}|^p` with its standard error.
    pub flow_moment: MeanEstimate,
    pub flow_scale: f64,
    pub flow_ratio: f64,
    /// Same moment after moving `x'` halfway toward `x`.
    pub flow_ratio_half: f64,
    pub flagged: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub p: u32,
    pub window: f64,
    pub pairs: Vec<MomentPairReport>,
}

impl MomentReport {
    pub fn flagged(&self) -> bool {
        self.pairs.iter().any(|p| p.flagged)
    }
}

/// Empirical ratios of the sup-moment, modulus-of-continuity and flow
/// continuity estimates for each pair of initial data.
pub fn check_moment_bounds(
    model: &ForwardModel,
    grid: &TimeGrid,
    marks: &MarkMeasureSpec,
    pairs: &[StartPair],
    cfg: &MomentConfig,
) -> Result<MomentReport> {
    if cfg.p < 2 || cfg.p % 2 != 0 {
        return Err(Error::invalid(format!("moment order must be even and >= 2, got {}", cfg.p)));
    }
    let steps = (cfg.window / grid.min_step()).round() as usize;
    if steps < 2 {
        return Err(Error::invalid("modulus window must span at least two grid steps"));
    }
    let p = cfg.p as i32;
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let a = simulate_paths(model, grid, marks, &pair.first, cfg.n_paths, cfg.seed)?;
        let b = simulate_paths(model, grid, marks, &pair.second, cfg.n_paths, cfg.seed)?;
        let x = norm(&pair.first.state);
        let growth = 1.0 + x.powi(p);

        let sup_moment =
            MeanEstimate::from_fn(a.n_paths(), |path| sup_over_nodes(&a, path, |s| norm(s).powi(p)))
                .mean;
        let modulus_moment = modulus(&a, steps, p);
        let modulus_moment_half = modulus(&a, steps / 2, p);
        let h = steps as f64 * grid.min_step();
        let modulus_ratio = modulus_moment / (growth * h);
        let modulus_ratio_half = modulus_moment_half / (growth * h / 2.0);

        let flow_moment = flow(&a, &b, p);
        let scale = flow_scale(&pair.first, &pair.second, p);
        let flow_ratio = safe_ratio(flow_moment.mean, scale);

        let mid: Vec<f64> = pair
            .first
            .state
            .iter()
            .zip(&pair.second.state)
            .map(|(u, v)| 0.5 * (u + v))
            .collect();
        let half_start = Start::new(pair.second.time, mid);
        let c = simulate_paths(model, grid, marks, &half_start, cfg.n_paths, cfg.seed)?;
        let flow_half = flow(&a, &c, p);
        let flow_ratio_half = safe_ratio(flow_half.mean, flow_scale(&pair.first, &half_start, p));

        let mut reasons = Vec::new();
        for (name, r) in [
            ("sup", sup_moment / growth),
            ("modulus", modulus_ratio),
            ("modulus(h/2)", modulus_ratio_half),
            ("flow", flow_ratio),
            ("flow(half)", flow_ratio_half),
        ] {
            if r > cfg.ceiling {
                reasons.push(format!("{name} ratio {r} exceeds ceiling {}", cfg.ceiling));
            }
        }
        if !stable(modulus_ratio, modulus_ratio_half, cfg.stability_factor) {
            reasons.push(format!(
                "modulus ratio unstable under halving h: {modulus_ratio} vs {modulus_ratio_half}"
            ));
        }
        if !stable(flow_ratio, flow_ratio_half, cfg.stability_factor) {
            reasons.push(format!(
                "flow ratio unstable under halving |x - x'|: {flow_ratio} vs {flow_ratio_half}"
            ));
        }
        out.push(MomentPairReport {
            pair: pair.clone(),
            sup_moment,
            sup_ratio: sup_moment / growth,
            modulus_moment,
            modulus_moment_half,
            modulus_ratio,
            modulus_ratio_half,
            flow_moment,
            flow_scale: scale,
            flow_ratio,
            flow_ratio_half,
            flagged: !reasons.is_empty(),
            reasons,
        });
    }
    Ok(MomentReport {
        p: cfg.p,
        window: cfg.window,
        pairs: out,
    })
}

fn stable(a: f64, b: f64, factor: f64) -> bool {
    if a == 0.0 && b == 0.0 {
        return true;
    }
    if a == 0.0 || b == 0.0 {
        // One side vanishes exactly: only acceptable when the other is tiny.
        return a.max(b) < 1e-12;
    }
    let r = a / b;
    r <= factor && r >= 1.0 / factor
}

fn safe_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// `|x − x'|^p + (1 + [|x| ∨ |x'|]^p) |t − t'|`.
fn flow_scale(a: &Start, b: &Start, p: i32) -> f64 {
    let dx: Vec<f64> = a.state.iter().zip(&b.state).map(|(u, v)| u - v).collect();
    let big = norm(&a.state).max(norm(&b.state));
    norm(&dx).powi(p) + (1.0 + big.powi(p)) * (a.time - b.time).abs()
}

fn sup_over_nodes(b: &PathBundle, path: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    (0..b.grid().n_nodes())
        .map(|i| f(b.state(i, path)))
        .fold(0.0, f64::max)
}

fn flow(a: &PathBundle, b: &PathBundle, p: i32) -> MeanEstimate {
    MeanEstimate::from_fn(a.n_paths(), |path| {
        (0..a.grid().n_nodes())
            .map(|i| {
                let d: f64 = a
                    .state(i, path)
                    .iter()
                    .zip(b.state(i, path))
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum();
                d.sqrt().powi(p)
            })
            .fold(0.0, f64::max)
    })
}

fn modulus(b: &PathBundle, steps: usize, p: i32) -> f64 {
    let n_nodes = b.grid().n_nodes();
    let mut worst: f64 = 0.0;
    for s in b.start_node()..n_nodes - 1 {
        let end = (s + steps).min(n_nodes - 1);
        let m = MeanEstimate::from_fn(b.n_paths(), |path| {
            let xs = b.state(s, path);
            (s + 1..=end)
                .map(|u| {
                    let d: f64 = xs
                        .iter()
                        .zip(b.state(u, path))
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum();
                    d.sqrt().powi(p)
                })
                .fold(0.0, f64::max)
        });
        worst = worst.max(m.mean);
    }
    worst
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct JumpMomentReport {
    pub p: u32,
    /// `E sup_t |∫∫ U dμ̃|^p`.
    pub sup_moment: MeanEstimate,
    /// `E |∫_0^T∫ U dμ̃|^p`.
    pub terminal_moment: MeanEstimate,
    /// `∫_0^T E|L_s|^p ds` on the grid.
    pub rhs_integral: f64,
    /// `sup_moment / rhs_integral` on nested path subsets `P/4, P/2, P`.
    pub fitted_constants: Vec<(usize, f64)>,
    pub flagged: bool,
}

impl JumpMomentReport {
    pub fn fitted_constant(&self) -> f64 {
        self.fitted_constants.last().map(|c| c.1).unwrap_or(0.0)
    }
}

/// Moment of the compensated Poisson integral of a predictand `U` against the
/// integral of its dominating process `L`.
///
/// `integrand(t, component, e)` must satisfy `|U| <= L(t)(1 ∧ |e|)` on every
/// quadrature mark.
#[allow(clippy::too_many_arguments)]
pub fn jump_integral_moment_check(
    grid: &TimeGrid,
    marks: &MarkMeasureSpec,
    integrand: &(dyn Fn(f64, usize, f64) -> f64 + Sync),
    dominating: &(dyn Fn(f64) -> f64 + Sync),
    p: u32,
    n_paths: usize,
    seed: u64,
) -> Result<JumpMomentReport> {
    if p < 2 {
        return Err(Error::invalid("moment order must be >= 2"));
    }
    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        for q in marks.quadrature() {
            let bound = dominating(t) * 1.0f64.min(q.mark.abs());
            if integrand(t, q.component, q.mark).abs() > bound * (1.0 + 1e-12) {
                return Err(Error::Precondition(format!(
                    "|U({t}, {})| exceeds L(t)(1 ∧ |e|)",
                    q.mark
                )));
            }
        }
    }
    let bundle = simulate_paths(
        &ForwardModel::zero(1, 1),
        grid,
        marks,
        &Start::origin(vec![0.0]),
        n_paths,
        seed,
    )?;
    let compensator: Vec<f64> = (0..grid.n_steps())
        .map(|i| {
            let t = grid.time(i);
            grid.step(i) * marks.integrate(|q| integrand(t, q.component, q.mark))
        })
        .collect();
    let pi = p as i32;

    let per_path: Vec<(f64, f64)> = (0..n_paths)
        .map(|path| {
            let mut m = 0.0;
            let mut sup: f64 = 0.0;
            let events = bundle.jumps(path);
            let mut cursor = 0;
            for i in 0..grid.n_steps() {
                let t = grid.time(i);
                while cursor < events.len() && events[cursor].step == i {
                    let ev = events[cursor];
                    m += integrand(t, ev.component, ev.mark);
                    cursor += 1;
                }
                m -= compensator[i];
                sup = sup.max(m.abs().powi(pi));
            }
            (sup, m.abs().powi(pi))
        })
        .collect();

    let sup_moment = MeanEstimate::from_fn(n_paths, |i| per_path[i].0);
    let terminal_moment = MeanEstimate::from_fn(n_paths, |i| per_path[i].1);
    let rhs_integral: f64 = (0..grid.n_steps())
        .map(|i| grid.step(i) * dominating(grid.time(i)).abs().powi(pi))
        .sum();

    let mut fitted_constants = Vec::new();
    let mut estimates = Vec::new();
    for subset in [n_paths / 4, n_paths / 2, n_paths] {
        if subset == 0 {
            continue;
        }
        let est = MeanEstimate::from_fn(subset, |i| per_path[i].0);
        fitted_constants.push((subset, safe_ratio(est.mean, rhs_integral)));
        estimates.push(est);
    }
    let flagged = match (estimates.first(), estimates.last()) {
        (Some(a), Some(b)) if rhs_integral > 0.0 => {
            let slack = 3.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            b.mean - a.mean > slack + 1e-12
        }
        _ => false,
    };
    Ok(JumpMomentReport {
        p,
        sup_moment,
        terminal_moment,
        rhs_integral,
        fitted_constants,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(t: f64, x: f64, tp: f64, xp: f64) -> StartPair {
        StartPair {
            first: Start::new(t, vec![x]),
            second: Start::new(tp, vec![xp]),
        }
    }

    #[test]
    fn identical_data_give_zero_flow() {
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let model = ForwardModel::arithmetic_brownian(0.1, 1.0);
        let cfg = MomentConfig {
            n_paths: 500,
            ..Default::default()
        };
        let r = check_moment_bounds(&model, &grid, &MarkMeasureSpec::none(), &[pair(0.0, 0.5, 0.0, 0.5)], &cfg)
            .unwrap();
        assert_eq!(r.pairs[0].flow_moment.mean, 0.0);
        assert_eq!(r.pairs[0].flow_ratio, 0.0);
    }

    #[test]
    fn zero_dynamics_flow_is_displacement() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let cfg = MomentConfig {
            n_paths: 50,
            window: 0.2,
            ..Default::default()
        };
        let r = check_moment_bounds(
            &ForwardModel::zero(1, 1),
            &grid,
            &MarkMeasureSpec::none(),
            &[pair(0.0, 2.0, 0.0, 3.0)],
            &cfg,
        )
        .unwrap();
        assert_eq!(r.pairs[0].flow_moment.mean, 1.0);
        assert_eq!(r.pairs[0].flow_moment.std_error, 0.0);
        assert!(!r.flagged());
    }

    #[test]
    fn rejects_odd_order() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let cfg = MomentConfig {
            p: 3,
            ..Default::default()
        };
        assert!(check_moment_bounds(&ForwardModel::zero(1, 1), &grid, &MarkMeasureSpec::none(), &[], &cfg).is_err());
    }

    #[test]
    fn zero_integrand_has_zero_moment() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0)]).unwrap();
        let r = jump_integral_moment_check(&grid, &marks, &|_, _, _| 0.0, &|_| 1.0, 2, 200, 3).unwrap();
        assert_eq!(r.sup_moment.mean, 0.0);
        assert_eq!(r.terminal_moment.mean, 0.0);
    }

    #[test]
    fn domination_is_enforced() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0)]).unwrap();
        assert!(jump_integral_moment_check(&grid, &marks, &|_, _, _| 1.0, &|_| 1.0, 2, 10, 3).is_err());
    }

    #[test]
    fn rhs_is_homogeneous_in_dominating_process() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0)]).unwrap();
        let u = |_: f64, _: usize, e: f64| 1.0f64.min(e.abs());
        let a = jump_integral_moment_check(&grid, &marks, &u, &|_| 1.0, 3, 100, 1).unwrap();
        let b = jump_integral_moment_check(&grid, &marks, &u, &|_| 2.0, 3, 100, 1).unwrap();
        assert_eq!(b.rhs_integral, 8.0 * a.rhs_integral);
    }
}
