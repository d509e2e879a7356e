use rayon::prelude::*;
use serde::Serialize;

use crate::condexp::{Projector, RegressionBasis};
use crate::error::{Error, Result};
use crate::forward::{MarkMeasureSpec, PathBundle};
use crate::solver::DiscreteSolution;
use crate::stats::ordered_sum;

pub const GRID_SUP_LABEL: &str = "grid-sup (under-)approximation";

/// A norm evaluated for one exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PNorm {
    pub p: f64,
    pub value: f64,
}

/// Empirical norms of a discrete solution on `[t_lo, t_hi]`.
///
/// `S`, `H` and `J` norms are in solution units; the BMO-type entries are
/// squared, as in their definitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub lo: usize,
    pub hi: usize,
    pub s_inf: f64,
    pub s_p: Vec<PNorm>,
    pub h2: f64,
    pub h_p: Vec<PNorm>,
    pub j2: f64,
    pub j_p: Vec<PNorm>,
    pub h2_bmo_sq: f64,
    pub j2_b_sq: f64,
    /// Sup of `|ΔM|` over realised jump events.
    pub j_inf: f64,
    pub j2_bmo_sq: f64,
    /// Sup of `|ψ|` over nodes, paths and the marks realised at least once.
    pub j_inf_marks: f64,
    pub n_events: usize,
    /// Set when no jump was realised, in which case `j_inf = 0`.
    pub no_jumps: bool,
    pub bmo_estimator: &'static str,
}

impl NormReport {
    pub fn s_p(&self, p: f64) -> Option<f64> {
        self.s_p.iter().find(|n| n.p == p).map(|n| n.value)
    }

    pub fn h_p(&self, p: f64) -> Option<f64> {
        self.h_p.iter().find(|n| n.p == p).map(|n| n.value)
    }

    pub fn j_p(&self, p: f64) -> Option<f64> {
        self.j_p.iter().find(|n| n.p == p).map(|n| n.value)
    }
}

/// Norms on the whole solved range `[start_node, N]`.
pub fn estimate_norms(
    solution: &DiscreteSolution,
    bundle: &PathBundle,
    marks: &MarkMeasureSpec,
    basis: &RegressionBasis,
    p_list: &[f64],
) -> Result<NormReport> {
    let n = solution.grid.n_steps();
    estimate_norms_between(solution, bundle, marks, basis, p_list, solution.start_node, n)
}

/// Norms on the node range `[lo, hi]`; integrals run over steps `lo..hi`.
pub fn estimate_norms_between(
    solution: &DiscreteSolution,
    bundle: &PathBundle,
    marks: &MarkMeasureSpec,
    basis: &RegressionBasis,
    p_list: &[f64],
    lo: usize,
    hi: usize,
) -> Result<NormReport> {
    check_alignment(solution, bundle, marks)?;
    if lo < solution.start_node || hi > solution.grid.n_steps() || lo > hi {
        return Err(Error::invalid(format!(
            "node range [{lo}, {hi}] outside the solved range [{}, {}]",
            solution.start_node,
            solution.grid.n_steps()
        )));
    }
    if let Some(p) = p_list.iter().find(|p| !(p.is_finite() && **p >= 1.0)) {
        return Err(Error::invalid(format!("norm exponent {p} must be finite and at least 1")));
    }
    let paths = solution.n_paths();
    let grid = &solution.grid;
    let z_sq = |i: usize, p: usize| solution.z.get(i, p).iter().map(|v| v * v).sum::<f64>();
    let psi_sq = |i: usize, p: usize| marks.l2_norm_sq(solution.psi.get(i, p));

    let s_inf = (lo..=hi)
        .map(|i| solution.y.node(i).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0, f64::max);
    let y_path_sup: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| (lo..=hi).map(|i| solution.y.value(i, p).abs()).fold(0.0, f64::max))
        .collect();
    let z_int: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| (lo..hi).map(|i| grid.step(i) * z_sq(i, p)).sum())
        .collect();
    let psi_int: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| (lo..hi).map(|i| grid.step(i) * psi_sq(i, p)).sum())
        .collect();

    let moment = |v: &[f64], p: f64| (ordered_sum(paths, |i| v[i].powf(p)) / paths as f64).powf(1.0 / p);
    let s_p = p_list.iter().map(|&p| PNorm { p, value: moment(&y_path_sup, p) }).collect();
    // ‖Z‖_{H^p} = E[(∫|Z|²)^{p/2}]^{1/p}.
    let h_p = p_list
        .iter()
        .map(|&p| PNorm { p, value: (ordered_sum(paths, |i| z_int[i].powf(p / 2.0)) / paths as f64).powf(1.0 / p) })
        .collect();
    let j_p = p_list
        .iter()
        .map(|&p| PNorm { p, value: (ordered_sum(paths, |i| psi_int[i].powf(p / 2.0)) / paths as f64).powf(1.0 / p) })
        .collect();
    let h2 = (ordered_sum(paths, |i| z_int[i]) / paths as f64).sqrt();
    let j2 = (ordered_sum(paths, |i| psi_int[i]) / paths as f64).sqrt();

    // Jump events: an event in step k happens inside (t_k, t_{k+1}]; its
    // ΔM uses the predictable value ψ_k, and it is attached to node k + 1.
    let mut event_sq = vec![0.0f64; (hi - lo + 1) * paths];
    let mut realised = vec![false; marks.n_marks()];
    let mut n_events = 0;
    let mut j_inf = 0.0f64;
    for p in 0..paths {
        for ev in bundle.jumps(p) {
            if ev.step < lo || ev.step >= hi {
                continue;
            }
            let jump = solution.psi.get(ev.step, p)[ev.atom];
            realised[ev.atom] = true;
            n_events += 1;
            j_inf = j_inf.max(jump.abs());
            let slot = &mut event_sq[(ev.step + 1 - lo) * paths + p];
            *slot = slot.max(jump * jump);
        }
    }
    let j_inf_marks = (lo..hi)
        .flat_map(|i| (0..paths).map(move |p| (i, p)))
        .map(|(i, p)| {
            solution.psi.get(i, p)
                .iter()
                .zip(&realised)
                .filter(|(_, r)| **r)
                .fold(0.0f64, |m, (v, _)| m.max(v.abs()))
        })
        .fold(0.0, f64::max);

    // Conditional tails E[∫_{t_k}^{t_hi} · | F_{t_k}] for every node k, by
    // regression on X_k; node hi has empty tails.
    let mut tails = vec![0.0; 2 * paths];
    let mut h2_bmo_sq = 0.0f64;
    let mut j2_b_sq = 0.0f64;
    let mut j2_bmo_sq = (0..paths).map(|p| event_sq[(hi - lo) * paths + p]).fold(0.0, f64::max);
    let dim = bundle.state_dim();
    for k in (lo..hi).rev() {
        let h = grid.step(k);
        tails.par_chunks_mut(2).enumerate().for_each(|(p, t)| {
            t[0] += h * z_sq(k, p);
            t[1] += h * psi_sq(k, p);
        });
        let projector = Projector::new(bundle.states().node(k), dim, basis)?;
        let fz = projector.fitted(&projector.fit_strided(&tails, 2, 0)?);
        let fj = projector.fitted(&projector.fit_strided(&tails, 2, 1)?);
        let events = &event_sq[(k - lo) * paths..(k - lo + 1) * paths];
        let (mut hz, mut hj, mut hb) = (0.0f64, 0.0f64, 0.0f64);
        for p in 0..paths {
            let tj = fj[p].max(0.0);
            hz = hz.max(fz[p].max(0.0));
            hj = hj.max(tj);
            hb = hb.max(tj + events[p]);
        }
        h2_bmo_sq = h2_bmo_sq.max(hz);
        j2_b_sq = j2_b_sq.max(hj);
        j2_bmo_sq = j2_bmo_sq.max(hb);
    }

    Ok(NormReport {
        lo,
        hi,
        s_inf,
        s_p,
        h2,
        h_p,
        j2,
        j_p,
        h2_bmo_sq,
        j2_b_sq,
        j_inf,
        j2_bmo_sq,
        j_inf_marks,
        n_events,
        no_jumps: n_events == 0,
        bmo_estimator: GRID_SUP_LABEL,
    })
}

fn check_alignment(solution: &DiscreteSolution, bundle: &PathBundle, marks: &MarkMeasureSpec) -> Result<()> {
    if solution.grid != *bundle.grid() || solution.n_paths() != bundle.n_paths() {
        return Err(Error::Precondition("solution and path bundle are not on the same grid and paths".into()));
    }
    if marks != bundle.marks() || solution.psi.width() != marks.n_marks() {
        return Err(Error::Precondition("mark measure does not match the bundle and the solution".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::driver::{scenarios, TerminalCondition};
    use crate::field::NodeField;
    use crate::forward::{simulate_paths, ForwardModel, Start, TimeGrid};
    use crate::solver::{solve_lipschitz_absde, SolverConfig};
    use crate::stats::MeanEstimate;

    fn bundle(marks: &MarkMeasureSpec, n: usize, paths: usize, seed: u64) -> PathBundle {
        let grid = TimeGrid::uniform(1.0, n).unwrap();
        let jumps = if marks.quadrature().iter().all(|q| q.mark.abs() <= 1.0) { 1.0 } else { 0.0 };
        let model = ForwardModel::arithmetic_brownian(0.0, 1.0).with_additive_jumps(jumps);
        simulate_paths(&model, &grid, marks, &Start::origin(vec![0.0]), paths, seed).unwrap()
    }

    fn constant_solution(b: &PathBundle, y: f64, z: f64, psi: &[f64]) -> DiscreteSolution {
        let grid = b.grid().clone();
        let (nodes, paths) = (grid.n_nodes(), b.n_paths());
        let mut psi_field = NodeField::zeros(nodes, paths, psi.len());
        for i in 0..nodes - 1 {
            for p in 0..paths {
                psi_field.get_mut(i, p).copy_from_slice(psi);
            }
        }
        let mut zf = NodeField::filled(nodes, paths, 1, z);
        zf.node_mut(nodes - 1).fill(0.0);
        DiscreteSolution {
            grid,
            start_node: 0,
            y: NodeField::filled(nodes, paths, 1, y),
            z: zf,
            psi: psi_field,
            driver_values: NodeField::zeros(nodes, paths, 1),
            y_fits: Vec::new(),
            z_fits: Vec::new(),
            traces: Vec::new(),
            truncation: None,
        }
    }

    fn chain_holds(r: &NormReport) -> bool {
        r.j2_bmo_sq >= r.j2_b_sq.max(r.j_inf * r.j_inf) && r.j2_bmo_sq <= r.j2_b_sq + r.j_inf * r.j_inf
    }

    #[test]
    fn constant_y_has_only_the_sup_norm() {
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0)]).unwrap();
        let b = bundle(&marks, 10, 500, 1);
        let sol = constant_solution(&b, -0.3, 0.0, &[0.0]);
        let r = estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[2.0, 4.0]).unwrap();
        assert_eq!(r.s_inf, 0.3);
        for p in [2.0, 4.0] {
            assert!((r.s_p(p).unwrap() - 0.3).abs() < 1e-12);
            assert_eq!(r.h_p(p).unwrap(), 0.0);
            assert_eq!(r.j_p(p).unwrap(), 0.0);
        }
        assert_eq!((r.h2, r.j2, r.h2_bmo_sq, r.j2_b_sq, r.j_inf, r.j2_bmo_sq), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(chain_holds(&r));
        assert_eq!(r.bmo_estimator, GRID_SUP_LABEL);
    }

    #[test]
    fn unit_z_gives_horizon_bmo() {
        let marks = MarkMeasureSpec::none();
        let b = bundle(&marks, 20, 300, 2);
        let sol = constant_solution(&b, 0.0, 1.0, &[]);
        let r = estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[2.0]).unwrap();
        assert!((r.h2_bmo_sq - 1.0).abs() < 1e-12, "{}", r.h2_bmo_sq);
        assert!((r.h2 - 1.0).abs() < 1e-12);
        assert!(r.no_jumps && r.j_inf == 0.0);
    }

    #[test]
    fn constant_psi_compensator() {
        let (c, lambda) = (0.7, 2.0);
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.2), (1.5, 0.8)]).unwrap();
        let b = bundle(&marks, 20, 2000, 3);
        let sol = constant_solution(&b, 0.0, 0.0, &[c, c]);
        let r = estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[2.0]).unwrap();
        // the compensator ∫∫ c² ν(de) dt is deterministic, so the regression
        // reproduces it and the standard error is zero.
        let oracle = c * c * lambda * 1.0;
        assert!((r.j2_b_sq - oracle).abs() < 1e-12, "{} vs {oracle}", r.j2_b_sq);
        assert!(!r.no_jumps);
        assert_eq!(r.j_inf, c);
        assert_eq!(r.j_inf_marks, c);
        assert!(chain_holds(&r));
        // the first event node is t_1, whose tail has lost one step.
        assert!((r.j2_bmo_sq - (c * c * lambda * 0.95 + c * c)).abs() < 1e-12, "{}", r.j2_bmo_sq);
    }

    #[test]
    fn realised_marks_define_the_jump_sup() {
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0), (2.0, 1.0)]).unwrap();
        let b = bundle(&marks, 20, 400, 4);
        let sol = constant_solution(&b, 0.0, 0.0, &[0.5, 2.0]);
        let r = estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[2.0]).unwrap();
        assert_eq!(r.j_inf, 2.0);
        assert_eq!(r.j_inf_marks, 2.0);
    }

    #[test]
    fn scaling_psi_scales_jump_norms() {
        let marks = Arc::new(MarkMeasureSpec::single(0.2, &[(0.5, 0.6), (-1.0, 0.4)]).unwrap());
        let b = bundle(&marks, 20, 3000, 5);
        let f = scenarios::entropic(1.0, TerminalCondition::sine(1.0), marks.clone(), 1).unwrap();
        let f = crate::driver::regularize_driver(&f, 8.0).unwrap();
        let config = SolverConfig { tolerance: 1e-10, ..SolverConfig::default() };
        let sol = solve_lipschitz_absde(&b, &f, &config, &RegressionBasis::default()).unwrap();
        let base = estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[2.0]).unwrap();
        assert!(chain_holds(&base));
        let mut scaled = sol.clone();
        scaled.psi = sol.psi.map(|v| 2.0 * v);
        let r = estimate_norms(&scaled, &b, &marks, &RegressionBasis::default(), &[2.0]).unwrap();
        assert!(chain_holds(&r));
        assert_eq!(r.j_inf, 2.0 * base.j_inf);
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
        assert!(rel(r.j2_b_sq, 4.0 * base.j2_b_sq));
        assert!(rel(r.j2, 2.0 * base.j2));
        // a sub-interval never increases the sup norm
        let sub = estimate_norms_between(&sol, &b, &marks, &RegressionBasis::default(), &[2.0], 5, 15).unwrap();
        assert!(sub.s_inf <= base.s_inf);
        assert!(chain_holds(&sub));
    }

    #[test]
    fn h2_matches_its_definition() {
        let marks = MarkMeasureSpec::none();
        let b = bundle(&marks, 10, 1000, 6);
        let mut sol = constant_solution(&b, 0.0, 0.0, &[]);
        for i in 0..10 {
            for p in 0..1000 {
                sol.z.set_value(i, p, b.state(i, p)[0]);
            }
        }
        let r = estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[2.0, 4.0]).unwrap();
        let ints: Vec<f64> = (0..1000).map(|p| (0..10).map(|i| 0.1 * b.state(i, p)[0].powi(2)).sum()).collect();
        let h2 = MeanEstimate::from_values(&ints).mean.sqrt();
        let h4 = MeanEstimate::from_fn(1000, |p| ints[p] * ints[p]).mean.powf(0.25);
        assert!((r.h2 - h2).abs() < 1e-12 && (r.h_p(2.0).unwrap() - h2).abs() < 1e-12);
        assert!((r.h_p(4.0).unwrap() - h4).abs() < 1e-12);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let marks = MarkMeasureSpec::none();
        let b = bundle(&marks, 10, 100, 7);
        let other = bundle(&marks, 10, 50, 7);
        let sol = constant_solution(&other, 0.0, 0.0, &[]);
        assert!(estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[2.0]).is_err());
        let sol = constant_solution(&b, 0.0, 0.0, &[]);
        assert!(estimate_norms(&sol, &b, &marks, &RegressionBasis::default(), &[0.5]).is_err());
        assert!(estimate_norms_between(&sol, &b, &marks, &RegressionBasis::default(), &[2.0], 4, 3).is_err());
    }
}
