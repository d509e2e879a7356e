use serde::Serialize;

use crate::driver::BoundParamsA;
use crate::{Error, Result};

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(what.to_string()))
    }
}

/// `‖Y‖_{S^∞} ≤ exp(T(β + δ e^{βT})) (‖ξ‖_∞ + T l̄)`.
pub fn universal_bound_y(a: &BoundParamsA) -> Result<f64> {
    a.validate()?;
    let expo = a.horizon * (a.beta + a.delta * (a.beta * a.horizon).exp());
    finite(expo.exp() * (a.xi_sup + a.horizon * a.l_bar), "universal Y bound")
}

/// Squared BMO bounds `(‖Z‖², ‖ψ‖²)` given `‖Y‖_{S^∞} ≤ y_sup`:
/// `Z² ≤ e^{4γY}/γ² (1 + 2γT[l̄ + (β+δ)Y])` and
/// `ψ² ≤ e^{4γY}/γ² (2 + 4γT[l̄ + (β+δ)Y]) + 4Y²`.
pub fn universal_bound_z_psi(a: &BoundParamsA, y_sup: f64) -> Result<(f64, f64)> {
    a.validate()?;
    if !(y_sup >= 0.0) {
        return Err(Error::invalid(format!("Y bound must be nonnegative, got {y_sup}")));
    }
    let g = a.gamma;
    let pre = (4.0 * g * y_sup).exp() / (g * g);
    let inner = a.l_bar + (a.beta + a.delta) * y_sup;
    let z2 = pre * (1.0 + 2.0 * g * a.horizon * inner);
    let psi2 = pre * (2.0 + 4.0 * g * a.horizon * inner) + 4.0 * y_sup * y_sup;
    Ok((finite(z2, "universal Z bound")?, finite(psi2, "universal psi bound")?))
}

/// One bound check row: `pass` iff `rhs − lhs ≥ −tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEvaluation {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl BoundEvaluation {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let slack = rhs - lhs;
        Self {
            name: name.into(),
            lhs,
            rhs,
            slack,
            tolerance,
            pass: slack >= -tolerance,
        }
    }
}
