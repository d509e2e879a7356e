//! Built-in drivers used by the experiment runner and the test suite.

use std::sync::Arc;

use super::functional::AnticipatedFunctional;
use super::params::{j_gamma_or_inf, StructureParams};
use super::spec::{DriverSpec, GammaContext, GammaKernel, TerminalCondition};
use crate::forward::MarkMeasureSpec;
use crate::{Error, Result};

/// Smallest exponent accepted where a driver has no quadratic part.
const NOMINAL_GAMMA: f64 = 1.0;

/// `f ≡ 0`.
pub fn zero(terminal: TerminalCondition, marks: Arc<MarkMeasureSpec>, brownian_dim: usize) -> Result<DriverSpec> {
    Ok(DriverSpec::new(
        "zero",
        Arc::new(|_| 0.0),
        StructureParams::new(0.0, 0.0, 0.0, NOMINAL_GAMMA)?,
        terminal,
        marks,
        brownian_dim,
    )?
    .with_local_lipschitz(Arc::new(|_| 0.0))
    .with_global_lipschitz(true)
    .with_monotone_in_q(true))
}

/// `f ≡ c`, a constant source term.
pub fn constant(c: f64, terminal: TerminalCondition, marks: Arc<MarkMeasureSpec>, brownian_dim: usize) -> Result<DriverSpec> {
    Ok(DriverSpec::new(
        format!("constant({c})"),
        Arc::new(move |_| c),
        StructureParams::new(c.abs(), 0.0, 0.0, NOMINAL_GAMMA)?,
        terminal,
        marks,
        brownian_dim,
    )?
    .with_local_lipschitz(Arc::new(|_| 0.0))
    .with_global_lipschitz(true)
    .with_monotone_in_q(true))
}

/// Entropic driver `f = (γ/2)|z|² + Σ_q w_q j_γ(ψ(e_q))`.
pub fn entropic(
    gamma: f64,
    terminal: TerminalCondition,
    marks: Arc<MarkMeasureSpec>,
    brownian_dim: usize,
) -> Result<DriverSpec> {
    let structure = StructureParams::new(0.0, 0.0, 0.0, gamma)?;
    let m = marks.clone();
    let lambda = marks.total_intensity();
    Ok(DriverSpec::new(
        "entropic",
        Arc::new(move |i| {
            let zz: f64 = i.z.iter().map(|v| v * v).sum();
            let jump: f64 = m
                .quadrature()
                .iter()
                .zip(i.psi)
                .map(|(q, p)| q.weight * j_gamma_or_inf(gamma, *p))
                .sum();
            0.5 * gamma * zz + jump
        }),
        structure,
        terminal,
        marks,
        brownian_dim,
    )?
    .with_local_lipschitz(Arc::new(move |level| {
        (gamma * level).max(lambda * (gamma * level).exp_m1())
    }))
    .with_monotone_in_q(true))
}

/// Secant kernel `Γ(e_q) = (j_γ(ψ) − j_γ(ψ'))/(ψ − ψ')` for the entropic jump
/// term on `|ψ|, |ψ'| ≤ level`, with bounds scaled by the smallest `1 ∧ |e|`.
pub fn entropic_gamma_kernel(gamma: f64, level: f64, marks: &MarkMeasureSpec) -> Result<GammaKernel> {
    let eta_min = marks
        .quadrature()
        .iter()
        .map(|q| q.mark.abs().min(1.0))
        .fold(1.0f64, f64::min);
    let lower = (-gamma * level).exp_m1() / eta_min;
    let upper = (gamma * level).exp_m1() / eta_min;
    if lower <= -1.0 {
        return Err(Error::invalid(format!(
            "secant kernel lower constant {lower} is not above -1; reduce the level or the small marks"
        )));
    }
    let kernel = Arc::new(move |ctx: &GammaContext<'_>, q: usize| {
        let (a, b) = (ctx.psi[q].clamp(-level, level), ctx.psi_prime[q].clamp(-level, level));
        if (a - b).abs() < 1e-12 {
            (gamma * a).exp_m1()
        } else {
            (j_gamma_or_inf(gamma, a) - j_gamma_or_inf(gamma, b)) / (a - b)
        }
    });
    GammaKernel::new(kernel, lower, upper)
}

/// `f = c · y`.
pub fn linear_y(c: f64, terminal: TerminalCondition, marks: Arc<MarkMeasureSpec>, brownian_dim: usize) -> Result<DriverSpec> {
    Ok(DriverSpec::new(
        format!("linear_y({c})"),
        Arc::new(move |i| c * i.y),
        StructureParams::new(0.0, 0.0, c.abs(), NOMINAL_GAMMA)?,
        terminal,
        marks,
        brownian_dim,
    )?
    .with_local_lipschitz(Arc::new(move |_| c.abs()))
    .with_global_lipschitz(true)
    .with_monotone_in_q(true))
}

/// `f = δ · sup_{v ∈ [r, T]} |Y_v|` plus an optional constant `shift`.
pub fn anticipated_sup(
    delta: f64,
    shift: f64,
    terminal: TerminalCondition,
    marks: Arc<MarkMeasureSpec>,
    brownian_dim: usize,
) -> Result<DriverSpec> {
    if delta < 0.0 {
        return Err(Error::invalid(format!("delta must be nonnegative, got {delta}")));
    }
    Ok(DriverSpec::new(
        if shift == 0.0 {
            format!("anticipated_sup({delta})")
        } else {
            format!("anticipated_sup({delta})+{shift}")
        },
        Arc::new(move |i| delta * i.anticipated + shift),
        StructureParams::new(shift.abs(), delta, 0.0, NOMINAL_GAMMA)?,
        terminal,
        marks,
        brownian_dim,
    )?
    .with_functional(AnticipatedFunctional::RunningSupAbs)
    .with_local_lipschitz(Arc::new(move |_| delta))
    .with_global_lipschitz(true))
}

/// `f = κ · Y_{(r + θ) ∧ T}`.
pub fn deferred_value(
    lag: f64,
    kappa: f64,
    terminal: TerminalCondition,
    marks: Arc<MarkMeasureSpec>,
    brownian_dim: usize,
) -> Result<DriverSpec> {
    if !(lag > 0.0) {
        return Err(Error::invalid(format!("lag must be positive, got {lag}")));
    }
    Ok(DriverSpec::new(
        format!("deferred_value({lag})"),
        Arc::new(move |i| kappa * i.anticipated),
        StructureParams::new(0.0, kappa.abs(), 0.0, NOMINAL_GAMMA)?,
        terminal,
        marks,
        brownian_dim,
    )?
    .with_functional(AnticipatedFunctional::DeferredValue { lag })
    .with_local_lipschitz(Arc::new(move |_| kappa.abs()))
    .with_global_lipschitz(true)
    .with_monotone_in_q(kappa >= 0.0))
}

/// Ordered pair `f₁ = δ · sup|Y|`, `f₂ = f₁ + shift` sharing a nonnegative
/// terminal condition.
///
/// `sup|q|` is nondecreasing in `q` on nonnegative paths, and with `ξ ≥ 0`
/// and `f ≥ 0` the solutions stay nonnegative, so `f₂` is declared monotone.
pub fn comparison_pair(
    delta: f64,
    shift: f64,
    terminal: TerminalCondition,
    marks: Arc<MarkMeasureSpec>,
    brownian_dim: usize,
) -> Result<(DriverSpec, DriverSpec)> {
    if shift < 0.0 {
        return Err(Error::invalid(format!("comparison shift must be nonnegative, got {shift}")));
    }
    let lower = anticipated_sup(delta, 0.0, terminal.clone(), marks.clone(), brownian_dim)?.with_monotone_in_q(true);
    let upper = anticipated_sup(delta, shift, terminal, marks, brownian_dim)?.with_monotone_in_q(true);
    Ok((lower, upper))
}
