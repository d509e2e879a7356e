use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `j_γ(u) = (e^{γu} − 1 − γu) / γ`.
///
/// Evaluated through `expm1` with a series fallback near zero so that the
/// result stays nonnegative and accurate for tiny `γu`.
pub fn j_gamma(gamma: f64, u: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("growth exponent must be positive, got {gamma}")));
    }
    let x = gamma * u;
    if x > 709.0 {
        return Err(Error::Overflow(format!("j_gamma({gamma}, {u})")));
    }
    let v = if x.abs() < 1e-4 {
        // x²/2 + x³/6 + x⁴/24
        x * x * (0.5 + x * (1.0 / 6.0 + x / 24.0))
    } else {
        x.exp_m1() - x
    };
    Ok(v.max(0.0) / gamma)
}

/// Infallible variant for use inside drivers; overflow maps to `+∞`, which the
/// solver reports as a non-finite driver value.
#[inline]
pub(crate) fn j_gamma_or_inf(gamma: f64, u: f64) -> f64 {
    j_gamma(gamma, u).unwrap_or(f64::INFINITY)
}

/// `φ_m`: clamp to `[−m, m]`.
#[inline]
pub fn truncate_value(m: f64, x: f64) -> f64 {
    x.clamp(-m, m)
}

/// Constants of the two-sided quadratic-exponential structure condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureParams {
    /// `sup_t l_t`.
    pub l_bar: f64,
    /// Coefficient of `sup_{v ≥ t} |q_v|`.
    pub delta: f64,
    /// Coefficient of `|y|`.
    pub beta: f64,
    /// Quadratic/exponential growth exponent `γ`.
    pub gamma: f64,
}

impl StructureParams {
    pub fn new(l_bar: f64, delta: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            l_bar,
            delta,
            beta,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.beta >= 0.0 && self.l_bar >= 0.0) {
            return Err(Error::invalid("l_bar, delta and beta must be nonnegative"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.l_bar.is_finite() && self.delta.is_finite() && self.beta.is_finite()) {
            return Err(Error::invalid("structure parameters must be finite"));
        }
        Ok(())
    }
}

/// The parameter set `(‖ξ‖_∞, l̄, δ, β, γ, T)` that controls the a priori bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParamsA {
    pub xi_sup: f64,
    pub l_bar: f64,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub horizon: f64,
}

impl BoundParamsA {
    pub fn new(xi_sup: f64, structure: StructureParams, horizon: f64) -> Result<Self> {
        let a = Self {
            xi_sup,
            l_bar: structure.l_bar,
            delta: structure.delta,
            beta: structure.beta,
            gamma: structure.gamma,
            horizon,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.xi_sup, self.l_bar, self.delta, self.beta, self.gamma, self.horizon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("bound parameters must be finite"));
        }
        if self.xi_sup < 0.0 {
            return Err(Error::invalid("xi_sup must be nonnegative"));
        }
        StructureParams {
            l_bar: self.l_bar,
            delta: self.delta,
            beta: self.beta,
            gamma: self.gamma,
        }
        .validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j_gamma_closed_forms() {
        assert_eq!(j_gamma(1.0, 0.0).unwrap(), 0.0);
        let v = j_gamma(1.0, 2f64.ln()).unwrap();
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.306853).abs() < 1e-6);
    }

    #[test]
    fn j_gamma_superadditive_scaling() {
        // j(ku) - k j(u) = (e^{kγu} − k e^{γu} − 1 + k)/γ ≥ 0 for k ≥ 1.
        let lhs = j_gamma(2.0, 3.0).unwrap() - 3.0 * j_gamma(2.0, 1.0).unwrap();
        let closed = ((6.0f64).exp() - 3.0 * (2.0f64).exp() - 1.0 + 3.0) / 2.0;
        assert!(lhs >= 0.0);
        assert!((lhs - closed).abs() < 1e-9 * closed);
    }

    #[test]
    fn j_gamma_small_argument_accuracy() {
        let g = 0.7;
        let u = 1e-7;
        // Leading two Taylor terms; the next one is below 1e-15 relative.
        let expect = g * u * u / 2.0 * (1.0 + g * u / 3.0);
        assert!((j_gamma(g, u).unwrap() - expect).abs() < 1e-13 * expect);
    }

    #[test]
    fn j_gamma_overflow_and_bad_gamma() {
        assert!(matches!(j_gamma(1.0, 1e4), Err(Error::Overflow(_))));
        assert!(j_gamma(0.0, 1.0).is_err());
        // Large negative arguments are fine: j_γ grows linearly there.
        assert!((j_gamma(1.0, -1e6).unwrap() - (1e6 - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_value(2.0, 3.0), 2.0);
        assert_eq!(truncate_value(2.0, -5.0), -2.0);
        assert_eq!(truncate_value(2.0, 1.5), 1.5);
        assert_eq!(truncate_value(f64::INFINITY, -1e300), -1e300);
    }

    #[test]
    fn structure_params_validation() {
        assert!(StructureParams::new(0.0, 0.0, 0.0, 1.0).is_ok());
        assert!(StructureParams::new(0.0, -1.0, 0.0, 1.0).is_err());
        assert!(StructureParams::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(StructureParams::new(f64::INFINITY, 0.0, 0.0, 1.0).is_err());
    }
}
