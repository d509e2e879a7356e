use std::sync::Arc;

use super::config::{BasisConfig, BasisKindConfig, ExperimentConfig, TerminalConfig, TerminalKind};
use crate::driver::{scenarios, DriverSpec, TerminalCondition};
use crate::forward::{ForwardModel, MarkMeasureSpec};
use crate::Result;

/// Every check name accepted in `checks`.
pub const CHECKS: &[&str] = &[
    "cole_hopf",
    "closed_form",
    "universal_bounds",
    "jump_chain",
    "energy",
    "doleans",
    "m_convergence",
    "picard",
    "stability",
    "comparison",
    "uniqueness",
    "z_growth",
    "u_regularity",
];

/// One built-in scenario and the result it exercises.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub driver: &'static str,
    pub exercises: &'static str,
    /// Solved by Picard iteration rather than the truncation cascade.
    pub lipschitz: bool,
    pub default_checks: &'static [&'static str],
    pub default_paths: usize,
    terminal: (TerminalKind, f64, f64),
    hat_basis: bool,
}

pub const SCENARIOS: &[ScenarioInfo] = &[
    ScenarioInfo {
        name: "zero",
        driver: "f = 0",
        exercises: "universal a priori bounds (trivial case)",
        lipschitz: true,
        default_checks: &["universal_bounds", "jump_chain", "energy", "picard", "z_growth"],
        default_paths: 10_000,
        terminal: (TerminalKind::Constant, 0.0, 0.0),
        hat_basis: false,
    },
    ScenarioInfo {
        name: "entropic",
        driver: "f = (γ/2)|z|² + Σ w j_γ(ψ)",
        exercises: "universal a priori bounds; truncation-cascade convergence; entropic representation",
        lipschitz: false,
        default_checks: &["cole_hopf", "universal_bounds", "jump_chain", "energy", "m_convergence"],
        default_paths: 100_000,
        terminal: (TerminalKind::Sine, 0.0, 1.0),
        hat_basis: true,
    },
    ScenarioInfo {
        name: "linear_y",
        driver: "f = c·y",
        exercises: "Lipschitz well-posedness; Picard contraction",
        lipschitz: true,
        default_checks: &["closed_form", "universal_bounds", "picard"],
        default_paths: 10_000,
        terminal: (TerminalKind::Constant, 1.0, 0.0),
        hat_basis: false,
    },
    ScenarioInfo {
        name: "anticipated_sup",
        driver: "f = δ·sup_{v≥r}|Y_v|",
        exercises: "anticipated well-posedness; windowed fixed point; uniqueness",
        lipschitz: true,
        default_checks: &["closed_form", "universal_bounds", "picard", "uniqueness"],
        default_paths: 10_000,
        terminal: (TerminalKind::Constant, 1.0, 0.0),
        hat_basis: false,
    },
    ScenarioInfo {
        name: "deferred_value",
        driver: "f = κ·Y_{(r+θ)∧T}",
        exercises: "deferred-value anticipated functional",
        lipschitz: true,
        default_checks: &["closed_form", "picard"],
        default_paths: 10_000,
        terminal: (TerminalKind::Constant, 1.0, 0.0),
        hat_basis: false,
    },
    ScenarioInfo {
        name: "comparison_pair",
        driver: "f₁ = δ·sup|Y|, f₂ = f₁ + shift",
        exercises: "comparison theorem for anticipated and non-anticipated drivers",
        lipschitz: true,
        default_checks: &["comparison", "universal_bounds"],
        default_paths: 10_000,
        terminal: (TerminalKind::Cosine, 1.0, 0.5),
        hat_basis: false,
    },
];

pub fn find_scenario(name: &str) -> Option<&'static ScenarioInfo> {
    SCENARIOS.iter().find(|s| s.name == name)
}

impl ScenarioInfo {
    pub fn default_terminal(&self) -> TerminalConfig {
        let (kind, level, amplitude) = self.terminal;
        TerminalConfig { kind, level, amplitude }
    }

    pub fn default_basis(&self) -> BasisConfig {
        BasisConfig {
            kind: if self.hat_basis {
                BasisKindConfig::PiecewiseLinear
            } else {
                BasisKindConfig::Polynomial
            },
            degree: 3,
            knots: 32,
            ridge: 1e-8,
        }
    }

    /// Whether `check` is meaningful for this scenario with terminal `t`.
    pub fn supports(&self, check: &str, t: &TerminalConfig) -> std::result::Result<(), String> {
        match check {
            "cole_hopf" if self.name != "entropic" => Err(format!("cole_hopf needs the entropic scenario, not {}", self.name)),
            "closed_form" if !matches!(self.name, "linear_y" | "anticipated_sup" | "deferred_value") => {
                Err(format!("no closed form is known for {}", self.name))
            }
            "closed_form" if t.kind != TerminalKind::Constant => {
                Err("closed_form needs a constant terminal condition".to_string())
            }
            "closed_form" if self.name == "anticipated_sup" && t.level < 0.0 => {
                Err("closed_form for anticipated_sup needs a nonnegative terminal level".to_string())
            }
            "m_convergence" if self.lipschitz => Err(format!("{} is solved without the truncation cascade", self.name)),
            "picard" if !self.lipschitz => Err(format!("{} is not solved by Picard iteration", self.name)),
            "uniqueness" | "universal_bounds" | "u_regularity" if t.kind == TerminalKind::Identity => {
                Err(format!("{check} needs a bounded terminal condition"))
            }
            "comparison" if self.name == "comparison_pair" && t.level - t.amplitude.abs() < 0.0 => {
                Err("comparison_pair needs a nonnegative terminal condition".to_string())
            }
            _ => Ok(()),
        }
    }
}

pub fn build_terminal(t: &TerminalConfig) -> TerminalCondition {
    let (level, amp) = (t.level, t.amplitude);
    match t.kind {
        TerminalKind::Constant => TerminalCondition::constant(level),
        TerminalKind::Sine => TerminalCondition::new(
            format!("{level}+{amp}*sin(x0)"),
            Arc::new(move |x| level + amp * x[0].sin()),
            level.abs() + amp.abs(),
            amp.abs(),
            1.0,
        ),
        TerminalKind::Cosine => TerminalCondition::new(
            format!("{level}+{amp}*cos(x0)"),
            Arc::new(move |x| level + amp * x[0].cos()),
            level.abs() + amp.abs(),
            amp.abs(),
            1.0,
        ),
        TerminalKind::Identity => TerminalCondition::new(
            format!("{level}+{amp}*x0"),
            Arc::new(move |x| level + amp * x[0]),
            f64::INFINITY,
            amp.abs(),
            1.0,
        ),
    }
}

pub fn build_model(c: &ExperimentConfig) -> ForwardModel {
    let m = ForwardModel::arithmetic_brownian(c.model.drift, c.model.sigma);
    if c.model.jump_scale != 0.0 {
        m.with_additive_jumps(c.model.jump_scale)
    } else {
        m
    }
}

pub fn build_marks(c: &ExperimentConfig) -> Result<MarkMeasureSpec> {
    match &c.marks {
        None => Ok(MarkMeasureSpec::none()),
        Some(m) => {
            let atoms: Vec<(f64, f64)> = m.atoms.iter().map(|[e, w]| (*e, *w)).collect();
            MarkMeasureSpec::single(m.cutoff, &atoms)
        }
    }
}

/// The scenario's driver, and for `comparison_pair` the upper driver.
pub fn build_drivers(c: &ExperimentConfig, marks: Arc<MarkMeasureSpec>) -> Result<(DriverSpec, Option<DriverSpec>)> {
    let xi = build_terminal(c.terminal());
    let d = &c.driver;
    Ok(match c.scenario.as_str() {
        "zero" => (scenarios::zero(xi, marks, 1)?, None),
        "entropic" => (scenarios::entropic(d.gamma, xi, marks, 1)?, None),
        "linear_y" => (scenarios::linear_y(d.coefficient, xi, marks, 1)?, None),
        "anticipated_sup" => (scenarios::anticipated_sup(d.delta, 0.0, xi, marks, 1)?, None),
        "deferred_value" => (scenarios::deferred_value(d.lag, d.kappa, xi, marks, 1)?, None),
        "comparison_pair" => {
            let (lo, hi) = scenarios::comparison_pair(d.delta, d.shift, xi, marks, 1)?;
            (lo, Some(hi))
        }
        other => unreachable!("scenario {other} passed validation"),
    })
}

/// Closed-form `Y_0` for the constant-terminal Lipschitz scenarios.
pub fn closed_form_y0(c: &ExperimentConfig) -> f64 {
    let big_t = c.grid.horizon;
    let xi = c.terminal().level;
    let d = &c.driver;
    match c.scenario.as_str() {
        "linear_y" => xi * (d.coefficient * big_t).exp(),
        // Y is deterministic and nonincreasing in time, so sup_{v≥r}|Y_v| = Y_r.
        "anticipated_sup" => xi * (d.delta * big_t).exp(),
        "deferred_value" => deferred_ode(xi, d.kappa, d.lag, big_t, 0.0),
        other => unreachable!("no closed form for {other}"),
    }
}

/// `y' = −κ y((t+θ)∧T)`, `y(T) = ξ`, integrated backward by the method of steps.
pub fn deferred_ode(xi: f64, kappa: f64, lag: f64, horizon: f64, t: f64) -> f64 {
    let n = 200_000usize;
    let h = (horizon - t) / n as f64;
    if h <= 0.0 {
        return xi;
    }
    let shift = lag / h;
    let mut y = vec![xi; n + 1];
    let at = |y: &[f64], s: f64| {
        let k = s.min(n as f64);
        let lo = k.floor() as usize;
        let hi = (lo + 1).min(n);
        let w = k - lo as f64;
        y[lo] * (1.0 - w) + y[hi] * w
    };
    for k in (0..n).rev() {
        let a = at(&y, k as f64 + 1.0 + shift);
        let b = at(&y, k as f64 + shift);
        y[k] = y[k + 1] + kappa * h * 0.5 * (a + b);
    }
    y[0]
}
