use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::j_gamma_or_inf;
use super::spec::{DriverInput, DriverScratch, DriverSpec, GammaContext};
use crate::forward::TimeGrid;
use crate::{Error, Result};

/// One probe point for the driver validators. `path` holds the future values
/// `(q_{t_node}, …, q_{t_N})`; `psi_prime` is the partner point used by the
/// Γ check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriverProbe {
    pub node: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub path: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_prime: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProbeSet {
    pub probes: Vec<DriverProbe>,
}

impl ProbeSet {
    pub fn new(probes: Vec<DriverProbe>) -> Self {
        Self { probes }
    }

    /// Uniform probes: `x` in `[−x_radius, x_radius]^n`; path values, `y`, `z`
    /// and both ψ vectors in `[−radius, radius]`.
    pub fn random(
        grid: &TimeGrid,
        state_dim: usize,
        spec: &DriverSpec,
        count: usize,
        x_radius: f64,
        radius: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = |r: f64, rng: &mut ChaCha8Rng| r * (2.0 * rng.random::<f64>() - 1.0);
        let n_marks = spec.marks().n_marks();
        let probes = (0..count)
            .map(|_| {
                let node = rng.random_range(0..grid.n_nodes());
                DriverProbe {
                    node,
                    t: grid.time(node),
                    x: (0..state_dim).map(|_| u(x_radius, &mut rng)).collect(),
                    path: (node..grid.n_nodes()).map(|_| u(radius, &mut rng)).collect(),
                    y: u(radius, &mut rng),
                    z: (0..spec.brownian_dim()).map(|_| u(radius, &mut rng)).collect(),
                    psi: (0..n_marks).map(|_| u(radius, &mut rng)).collect(),
                    psi_prime: (0..n_marks).map(|_| u(radius, &mut rng)).collect(),
                }
            })
            .collect();
        Self { probes }
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub n_probes: usize,
    /// Smallest `min(upper − f, f − lower)` over the probes.
    pub worst_slack: f64,
    pub worst_probe: Option<usize>,
    pub violations: usize,
    pub passed: bool,
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sample the two-sided quadratic-exponential envelope
/// `∓(l̄ + δ sup|q| + β|y| + γ/2 |z|²) ∓ ∫ j_γ(∓ψ) ν(de)` at every probe.
pub fn check_structure_condition(spec: &DriverSpec, probes: &ProbeSet, grid: &TimeGrid) -> StructureReport {
    let s = spec.structure();
    let quad = spec.marks().quadrature();
    let mut scratch = DriverScratch::default();
    let mut worst = f64::INFINITY;
    let mut worst_probe = None;
    let mut violations = 0;
    for (k, pr) in probes.probes.iter().enumerate() {
        let base = s.l_bar
            + s.delta * sup_abs(&pr.path)
            + s.beta * pr.y.abs()
            + 0.5 * s.gamma * pr.z.iter().map(|v| v * v).sum::<f64>();
        let jp: f64 = quad.iter().zip(&pr.psi).map(|(q, p)| q.weight * j_gamma_or_inf(s.gamma, *p)).sum();
        let jm: f64 = quad.iter().zip(&pr.psi).map(|(q, p)| q.weight * j_gamma_or_inf(s.gamma, -*p)).sum();
        let upper = base + jp;
        let lower = -base - jm;
        let a = spec.anticipated_value(grid, pr.node, &pr.path);
        let f = spec.evaluate_with(
            &DriverInput {
                t: pr.t,
                x: &pr.x,
                anticipated: a,
                y: pr.y,
                z: &pr.z,
                psi: &pr.psi,
            },
            &mut scratch,
        );
        let slack = if !f.is_finite() {
            f64::NEG_INFINITY
        } else {
            (upper - f).min(f - lower)
        };
        if slack.is_nan() {
            continue;
        }
        let tol = 1e-10 * (1.0 + f.abs());
        if slack < -tol {
            violations += 1;
        }
        if slack < worst {
            worst = slack;
            worst_probe = Some(k);
        }
    }
    StructureReport {
        n_probes: probes.len(),
        worst_slack: worst,
        worst_probe,
        violations,
        passed: violations == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AGammaReport {
    pub n_probes: usize,
    /// Largest `f(ψ) − f(ψ') − Σ w Γ (ψ − ψ')`; nonpositive when the condition holds.
    pub worst_linearization: f64,
    /// Largest excursion of Γ outside `[C¹(1∧|e|), C²(1∧|e|)]`.
    pub worst_kernel_excursion: f64,
    pub violations: usize,
    pub passed: bool,
}

/// Check the one-sided Γ linearisation of the ψ-dependence on probe pairs.
pub fn check_a_gamma(spec: &DriverSpec, probes: &ProbeSet, grid: &TimeGrid) -> Result<AGammaReport> {
    let kernel = spec
        .gamma_kernel()
        .ok_or_else(|| Error::Unsupported(format!("driver {} carries no Γ kernel", spec.name())))?;
    let quad = spec.marks().quadrature();
    let mut scratch = DriverScratch::default();
    let mut worst_lin = f64::NEG_INFINITY;
    let mut worst_exc: f64 = 0.0;
    let mut violations = 0;
    for pr in &probes.probes {
        let a = spec.anticipated_value(grid, pr.node, &pr.path);
        let mut eval = |psi: &[f64]| {
            spec.evaluate_with(
                &DriverInput {
                    t: pr.t,
                    x: &pr.x,
                    anticipated: a,
                    y: pr.y,
                    z: &pr.z,
                    psi,
                },
                &mut scratch,
            )
        };
        let diff = eval(&pr.psi) - eval(&pr.psi_prime);
        let ctx = GammaContext {
            t: pr.t,
            x: &pr.x,
            anticipated: a,
            y: pr.y,
            z: &pr.z,
            psi: &pr.psi,
            psi_prime: &pr.psi_prime,
        };
        let mut lin = 0.0;
        let mut exc: f64 = 0.0;
        for (qi, q) in quad.iter().enumerate() {
            let g = (kernel.kernel)(&ctx, qi);
            lin += q.weight * g * (pr.psi[qi] - pr.psi_prime[qi]);
            let eta = q.mark.abs().min(1.0);
            exc = exc.max(kernel.lower * eta - g).max(g - kernel.upper * eta);
        }
        let gap = diff - lin;
        let tol = 1e-10 * (1.0 + diff.abs() + lin.abs());
        if gap > tol || exc > 1e-12 || !gap.is_finite() {
            violations += 1;
        }
        worst_lin = worst_lin.max(gap);
        worst_exc = worst_exc.max(exc);
    }
    Ok(AGammaReport {
        n_probes: probes.len(),
        worst_linearization: if probes.is_empty() { 0.0 } else { worst_lin },
        worst_kernel_excursion: worst_exc,
        violations,
        passed: violations == 0,
    })
}
