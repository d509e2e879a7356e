use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::marks::MarkMeasureSpec;
use crate::{Error, Result};

/// `b(t, x)` written into an `n`-vector.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `σ(t, x)` written row-major into an `n × d` buffer.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `γ_X^i(t, x, e)` for component `i`, written into an `n`-vector.
pub type JumpFn = Arc<dyn Fn(f64, &[f64], usize, f64, &mut [f64]) + Send + Sync>;

/// Coefficients of the forward jump-diffusion together with the declared
/// Lipschitz constant `K`.
#[derive(Clone)]
pub struct ForwardModel {
    state_dim: usize,
    brownian_dim: usize,
    lipschitz: f64,
    drift: DriftFn,
    diffusion: DiffusionFn,
    jump: JumpFn,
}

impl fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardModel")
            .field("state_dim", &self.state_dim)
            .field("brownian_dim", &self.brownian_dim)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl ForwardModel {
    /// Zero dynamics in dimension `n` driven by a `d`-dimensional Brownian motion.
    pub fn zero(state_dim: usize, brownian_dim: usize) -> Self {
        Self {
            state_dim,
            brownian_dim,
            lipschitz: 1.0,
            drift: Arc::new(|_, _, out| out.fill(0.0)),
            diffusion: Arc::new(|_, _, out| out.fill(0.0)),
            jump: Arc::new(|_, _, _, _, out| out.fill(0.0)),
        }
    }

    /// `dX = μ dt + s dW` in one dimension.
    pub fn arithmetic_brownian(drift: f64, sigma: f64) -> Self {
        Self::zero(1, 1)
            .with_drift(Arc::new(move |_, _, out| out[0] = drift))
            .with_diffusion(Arc::new(move |_, _, out| out[0] = sigma))
            .with_lipschitz(1.0f64.max(drift.abs() + sigma.abs()))
    }

    /// Additive jumps `γ_X(t, x, e) = scale · e` on every component.
    pub fn with_additive_jumps(self, scale: f64) -> Self {
        let k = self.lipschitz;
        self.with_jump(Arc::new(move |_, _, _, e, out| out.fill(scale * e)))
            .with_lipschitz(k)
    }

    pub fn with_drift(mut self, drift: DriftFn) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_diffusion(mut self, diffusion: DiffusionFn) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn with_jump(mut self, jump: JumpFn) -> Self {
        self.jump = jump;
        self
    }

    pub fn with_lipschitz(mut self, k: f64) -> Self {
        self.lipschitz = k;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    #[inline]
    pub fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }

    #[inline]
    pub fn jump(&self, t: f64, x: &[f64], component: usize, e: f64, out: &mut [f64]) {
        (self.jump)(t, x, component, e, out)
    }

    /// Probe the growth and Lipschitz conditions on random points.
    ///
    /// Probes draw `t ∈ [0, horizon]`, states in `[-radius, radius]^n` and marks
    /// from the quadrature atoms.
    pub fn check_lipschitz(
        &self,
        marks: &MarkMeasureSpec,
        horizon: f64,
        n_probes: usize,
        radius: f64,
        seed: u64,
    ) -> LipschitzReport {
        let (n, d) = (self.state_dim, self.brownian_dim);
        let k = self.lipschitz;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut violations = Vec::new();
        let zero = vec![0.0; n];
        let (mut b1, mut b2) = (vec![0.0; n], vec![0.0; n]);
        let (mut s1, mut s2) = (vec![0.0; n * d], vec![0.0; n * d]);
        let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
        let tol = 1e-9;

        for probe in 0..n_probes {
            let t = rng.random::<f64>() * horizon;
            let x: Vec<f64> = (0..n).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let xp: Vec<f64> = if probe == 0 {
                zero.clone()
            } else {
                (0..n).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect()
            };
            let dist = norm(&x.iter().zip(&xp).map(|(a, b)| a - b).collect::<Vec<_>>());

            self.drift(t, &x, &mut b1);
            self.drift(t, &xp, &mut b2);
            self.diffusion(t, &x, &mut s1);
            self.diffusion(t, &xp, &mut s2);
            let lhs = diff_norm(&b1, &b2) + diff_norm(&s1, &s2);
            if dist > 0.0 {
                let ratio = lhs / dist;
                worst = worst.max(ratio);
                if ratio > k * (1.0 + tol) {
                    violations.push(format!("drift/diffusion ratio {ratio} at t={t}, x={x:?}, x'={xp:?}"));
                }
            }

            self.drift(t, &zero, &mut b1);
            self.diffusion(t, &zero, &mut s1);
            let at_zero = norm(&b1) + norm(&s1);
            if at_zero > k * (1.0 + tol) {
                violations.push(format!("|b(t,0)| + |σ(t,0)| = {at_zero} exceeds K at t={t}"));
            }

            for q in marks.quadrature() {
                let eta = 1.0f64.min(q.mark.abs());
                // Components are summed over i as in the Lipschitz condition; with
                // a flattened quadrature each atom carries its own component.
                self.jump(t, &x, q.component, q.mark, &mut g1);
                self.jump(t, &xp, q.component, q.mark, &mut g2);
                if dist > 0.0 {
                    let ratio = diff_norm(&g1, &g2) / (eta * dist);
                    worst = worst.max(ratio);
                    if ratio > k * (1.0 + tol) {
                        violations.push(format!(
                            "jump ratio {ratio} at t={t}, e={}, x={x:?}, x'={xp:?}",
                            q.mark
                        ));
                    }
                }
                self.jump(t, &zero, q.component, q.mark, &mut g1);
                if norm(&g1) > k * eta * (1.0 + tol) {
                    violations.push(format!("|γ(t,0,e)| exceeds K(1∧|e|) at e={}", q.mark));
                }
            }
        }
        LipschitzReport {
            declared: k,
            worst_ratio: worst,
            violations,
        }
    }

    pub(crate) fn validate(&self, marks: &MarkMeasureSpec, horizon: f64) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        let report = self.check_lipschitz(marks, horizon, 64, 4.0, 0x5eed);
        if report.passed() {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "forward coefficients fail the Lipschitz probes: {}",
                report.violations[0]
            )))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub declared: f64,
    pub worst_ratio: f64,
    pub violations: Vec<String>,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
