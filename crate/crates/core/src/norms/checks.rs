use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::NodeField;
use crate::forward::PathBundle;
use crate::stats::MeanEstimate;
use crate::verify::BoundEvaluation;

use super::NormReport;

/// Largest exponent kept before a path's stochastic exponential is flagged as saturated.
const LOG_CEILING: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpNormCheck {
    pub rows: Vec<BoundEvaluation>,
    pub notes: Vec<String>,
    pub passed: bool,
}

/// The two-sided chain between the jump norms and the event-sup versus
/// mark-grid-sup comparison for `J∞`.
pub fn check_jump_norm_lemmas(report: &NormReport) -> JumpNormCheck {
    let jinf_sq = report.j_inf * report.j_inf;
    let rows = vec![
        BoundEvaluation::new("jump_chain_lower", report.j2_b_sq.max(jinf_sq), report.j2_bmo_sq, 0.0),
        BoundEvaluation::new("jump_chain_upper", report.j2_bmo_sq, report.j2_b_sq + jinf_sq, 0.0),
        BoundEvaluation::new("jump_sup_events_vs_marks", report.j_inf, report.j_inf_marks, 0.0),
    ];
    let mut notes = Vec::new();
    if report.no_jumps {
        notes.push("no jump realised; J∞ reported as 0".to_string());
    } else if report.j_inf_marks > 0.0 {
        notes.push(format!(
            "event sup is {:.3} of the mark-grid sup over {} events",
            report.j_inf / report.j_inf_marks,
            report.n_events
        ));
    }
    let passed = rows.iter().all(|r| r.pass);
    JumpNormCheck { rows, notes, passed }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoleansReport {
    pub n_paths: usize,
    /// Sample mean of `ℰ_T`.
    pub mean: MeanEstimate,
    /// Sample mean of `ℰ_T²`.
    pub second_moment: MeanEstimate,
    /// Paths whose exponent exceeded the ceiling and were capped.
    pub saturated: usize,
    pub pass: bool,
}

/// Stochastic exponential `Π exp(Z·ΔW − ½|Z|²Δ)` of a bounded kernel from the
/// bundle's start node to the horizon; passes when its mean is within three
/// standard errors of one and no path saturates.
pub fn doleans_check(z_kernel: &NodeField, bundle: &PathBundle) -> Result<DoleansReport> {
    let grid = bundle.grid();
    let d = bundle.brownian_dim();
    if z_kernel.nodes() != grid.n_nodes() || z_kernel.paths() != bundle.n_paths() || z_kernel.width() != d {
        return Err(Error::Precondition(format!(
            "kernel shape {}×{}×{} does not match the bundle {}×{}×{d}",
            z_kernel.nodes(),
            z_kernel.paths(),
            z_kernel.width(),
            grid.n_nodes(),
            bundle.n_paths()
        )));
    }
    if let Some(bad) = z_kernel.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::Precondition(format!("kernel is not bounded: entry {bad} is not finite")));
    }
    let logs: Vec<f64> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            (bundle.start_node()..grid.n_steps())
                .map(|i| {
                    let z = z_kernel.get(i, p);
                    let dw = bundle.increment(i, p);
                    let zdw: f64 = z.iter().zip(dw).map(|(a, b)| a * b).sum();
                    let zz: f64 = z.iter().map(|a| a * a).sum();
                    zdw - 0.5 * zz * grid.step(i)
                })
                .sum()
        })
        .collect();
    let saturated = logs.iter().filter(|l| 2.0 * **l > LOG_CEILING).count();
    let capped = |l: f64| l.min(LOG_CEILING / 2.0);
    let mean = MeanEstimate::from_fn(logs.len(), |p| capped(logs[p]).exp());
    let second_moment = MeanEstimate::from_fn(logs.len(), |p| (2.0 * capped(logs[p])).exp());
    Ok(DoleansReport {
        n_paths: logs.len(),
        mean,
        second_moment,
        saturated,
        pass: saturated == 0 && mean.within(1.0, 3.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub n: u32,
    /// Sample mean of `(∫|Z|² dr)^n`.
    pub lhs: MeanEstimate,
    /// `n! · ‖Z‖^{2n}_{H²_BMO}`.
    pub rhs: f64,
    pub row: BoundEvaluation,
}

/// Energy inequality `E[(∫|Z|²)^n] ≤ n! ‖Z‖^{2n}_{BMO}` with three standard
/// errors of slack.
pub fn energy_check(z: &NodeField, bundle: &PathBundle, n: u32, h2_bmo_sq: f64) -> Result<EnergyReport> {
    let grid = bundle.grid();
    if n == 0 {
        return Err(Error::invalid("energy exponent must be a positive integer"));
    }
    if z.nodes() != grid.n_nodes() || z.paths() != bundle.n_paths() {
        return Err(Error::Precondition("Z field is not aligned with the bundle".into()));
    }
    if !(h2_bmo_sq >= 0.0) {
        return Err(Error::Precondition(format!("BMO estimate {h2_bmo_sq} is not a nonnegative number")));
    }
    let ints: Vec<f64> = (0..z.paths())
        .into_par_iter()
        .map(|p| {
            (bundle.start_node()..grid.n_steps())
                .map(|i| grid.step(i) * z.get(i, p).iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
        })
        .collect();
    let lhs = MeanEstimate::from_fn(ints.len(), |p| ints[p].powi(n as i32));
    let factorial: f64 = (1..=n).map(f64::from).product();
    let rhs = factorial * h2_bmo_sq.powi(n as i32);
    let tolerance = 3.0 * lhs.std_error + 1e-12 * rhs;
    let row = BoundEvaluation::new(format!("energy_n{n}"), lhs.mean, rhs, tolerance);
    Ok(EnergyReport { n, lhs, rhs, row })
}
