use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::basis::{FeatureMap, RegressionBasis};
use crate::stats::{ordered_fold, ordered_sum, CHUNK};
use crate::{Error, Result};

/// Above this normal-equation condition number an unregularised fit is rejected.
const MAX_CONDITION: f64 = 1e13;

/// Fitted regression function `x ↦ c · φ(x)`.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    pub condition: f64,
    #[serde(skip)]
    map: Arc<FeatureMap>,
}

impl FitResult {
    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    /// A fit returning `c` everywhere, on an intercept-only map.
    pub fn constant(c: f64, dim: usize) -> Self {
        Self {
            coefficients: vec![c],
            residual_rms: 0.0,
            condition: 1.0,
            map: Arc::new(FeatureMap::fit(&[], dim, &RegressionBasis::default())),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut s = PredictScratch::default();
        self.predict_with(x, &mut s)
    }

    pub fn predict_with(&self, x: &[f64], s: &mut PredictScratch) -> f64 {
        s.pow.resize(self.map.scratch_len(), 0.0);
        s.phi.resize(self.map.n_features(), 0.0);
        self.map.eval_into(x, &mut s.pow, &mut s.phi);
        s.phi.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Default, Clone)]
pub struct PredictScratch {
    pow: Vec<f64>,
    phi: Vec<f64>,
}

/// Least-squares projector onto `span φ(X_i)` for one sample of states.
///
/// The design matrix and the Cholesky factor of the (ridge-regularised)
/// normal equations are computed once and reused for every target.
#[derive(Debug, Clone)]
pub struct Projector {
    map: Arc<FeatureMap>,
    phi: Vec<f64>,
    n: usize,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
}

impl Projector {
    /// `states` is `n × dim`, row-major.
    pub fn new(states: &[f64], dim: usize, basis: &RegressionBasis) -> Result<Self> {
        basis.validate()?;
        if dim == 0 || states.len() % dim != 0 {
            return Err(Error::invalid(format!("state buffer of length {} is not a multiple of dimension {dim}", states.len())));
        }
        let n = states.len() / dim;
        if let Some(bad) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite state at sample {}", bad / dim)));
        }
        let map = Arc::new(FeatureMap::fit(states, dim, basis));
        let b = map.n_features();
        if n < b {
            return Err(Error::invalid(format!("{n} samples cannot identify {b} regression coefficients")));
        }
        let mut phi = vec![0.0; n * b];
        phi.par_chunks_mut(CHUNK * b).enumerate().for_each(|(c, block)| {
            let mut pow = vec![0.0; map.scratch_len()];
            for (r, row) in block.chunks_exact_mut(b).enumerate() {
                let i = c * CHUNK + r;
                map.eval_into(&states[i * dim..(i + 1) * dim], &mut pow, row);
            }
        });
        let gram = ordered_fold(n, b * b, Vec::<(usize, f64)>::new, |nz, i, acc| {
            nz.clear();
            nz.extend(phi[i * b..(i + 1) * b].iter().copied().enumerate().filter(|(_, v)| *v != 0.0));
            for (a, &(j, rj)) in nz.iter().enumerate() {
                for &(k, rk) in &nz[a..] {
                    acc[j * b + k] += rj * rk;
                }
            }
        });
        let mut g = DMatrix::<f64>::zeros(b, b);
        for j in 0..b {
            for k in j..b {
                let v = gram[j * b + k] / n as f64;
                g[(j, k)] = v;
                g[(k, j)] = v;
            }
        }
        // The intercept is left unpenalised so that means are reproduced exactly.
        for j in 1..b {
            g[(j, j)] += basis.ridge;
        }
        let chol = g.clone().cholesky().ok_or_else(|| Error::IllConditioned {
            detail: format!(
                "normal equations with {b} features are not positive definite (ridge {}); use a positive ridge or fewer features",
                basis.ridge
            ),
        })?;
        let diag: Vec<f64> = (0..b).map(|j| chol.l_dirty()[(j, j)]).collect();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let condition = (hi / lo).powi(2);
        if basis.ridge == 0.0 && !(condition < MAX_CONDITION) {
            return Err(Error::IllConditioned {
                detail: format!("normal-equation condition {condition:.3e} with zero ridge; set a positive ridge"),
            });
        }
        Ok(Self {
            map,
            phi,
            n,
            chol,
            condition,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.map.n_features()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn map(&self) -> &Arc<FeatureMap> {
        &self.map
    }

    fn row(&self, i: usize) -> &[f64] {
        let b = self.n_features();
        &self.phi[i * b..(i + 1) * b]
    }

    /// Regress `targets` (one per sample) on the features.
    pub fn fit(&self, targets: &[f64]) -> Result<FitResult> {
        self.fit_strided(targets, 1, 0)
    }

    /// Regress column `col` of `targets` (`n × width`, row-major).
    pub fn fit_strided(&self, targets: &[f64], width: usize, col: usize) -> Result<FitResult> {
        if targets.len() != self.n * width {
            return Err(Error::invalid(format!(
                "expected {} targets, got {}",
                self.n * width,
                targets.len()
            )));
        }
        let b = self.n_features();
        let t = |i: usize| targets[i * width + col];
        if let Some(bad) = (0..self.n).find(|&i| !t(i).is_finite()) {
            return Err(Error::invalid(format!("non-finite regression target at sample {bad}: {}", t(bad))));
        }
        // Constant targets are reproduced exactly through the intercept.
        let first = t(0);
        if (1..self.n).all(|i| t(i) == first) {
            let mut coefficients = vec![0.0; b];
            coefficients[0] = first;
            return Ok(FitResult {
                coefficients,
                residual_rms: 0.0,
                condition: self.condition,
                map: self.map.clone(),
            });
        }
        let rhs = ordered_fold(self.n, b, || (), |_, i, acc| {
            let y = t(i);
            for (a, f) in acc.iter_mut().zip(self.row(i)) {
                *a += f * y;
            }
        });
        let rhs = DVector::from_iterator(b, rhs.into_iter().map(|v| v / self.n as f64));
        let coef = self.chol.solve(&rhs);
        let coefficients: Vec<f64> = coef.iter().copied().collect();
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::IllConditioned {
                detail: "regression produced non-finite coefficients".into(),
            });
        }
        let ss = ordered_sum(self.n, |i| {
            let fit: f64 = self.row(i).iter().zip(&coefficients).map(|(a, c)| a * c).sum();
            let r = t(i) - fit;
            r * r
        });
        Ok(FitResult {
            coefficients,
            residual_rms: (ss / self.n as f64).sqrt(),
            condition: self.condition,
            map: self.map.clone(),
        })
    }

    /// Fitted values of `fit` at every sample.
    pub fn fitted(&self, fit: &FitResult) -> Vec<f64> {
        let b = self.n_features();
        debug_assert_eq!(fit.coefficients.len(), b);
        self.phi
            .par_chunks(b)
            .with_min_len(CHUNK)
            .map(|row| row.iter().zip(&fit.coefficients).map(|(a, c)| a * c).sum())
            .collect()
    }

    /// Fit and evaluate in one go: the estimate of `E[target | X]` per sample.
    pub fn project(&self, targets: &[f64]) -> Result<Vec<f64>> {
        let fit = self.fit(targets)?;
        Ok(self.fitted(&fit))
    }
}

/// Ridge least-squares fit of `targets` on `φ(states)`.
pub fn fit_conditional(states: &[f64], dim: usize, targets: &[f64], basis: &RegressionBasis) -> Result<FitResult> {
    Projector::new(states, dim, basis)?.fit(targets)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let x = normals(500, 1);
        let fit = fit_conditional(&x, 1, &[2.5; 500], &RegressionBasis::default()).unwrap();
        for v in [-3.0, 0.0, 1.7] {
            assert!((fit.predict(&[v]) - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn basis_element_is_interpolated() {
        let x = normals(400, 2);
        let basis = RegressionBasis::new(1, 0.0).unwrap();
        let p = Projector::new(&x, 1, &basis).unwrap();
        let fitted = p.project(&x).unwrap();
        for (a, b) in fitted.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linearity_without_ridge() {
        let x = normals(300, 3);
        let y: Vec<f64> = x.iter().map(|v| (2.0 * v).sin()).collect();
        let basis = RegressionBasis::new(3, 0.0).unwrap();
        let p = Projector::new(&x, 1, &basis).unwrap();
        let f1 = p.project(&y).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| 1.5 - 3.0 * v).collect();
        let f2 = p.project(&y2).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((1.5 - 3.0 * a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficiency_without_ridge_is_reported() {
        // Two distinct values cannot carry a cubic.
        let x: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let err = Projector::new(&x, 1, &RegressionBasis::new(3, 0.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
        assert!(Projector::new(&x, 1, &RegressionBasis::new(3, 1e-8).unwrap()).is_ok());
    }

    #[test]
    fn too_few_samples() {
        assert!(Projector::new(&[0.0, 1.0], 1, &RegressionBasis::default()).is_err());
    }

    #[test]
    fn brownian_martingale_projection() {
        // X_T = X_t + √(T−t) G; regression of X_T on X_t recovers X_t with
        // residual RMS √(T−t).
        let n = 100_000;
        let (t, big_t): (f64, f64) = (0.4, 1.0);
        let g1 = normals(n, 4);
        let g2 = normals(n, 5);
        let xt: Vec<f64> = g1.iter().map(|g| t.sqrt() * g).collect();
        let xtt: Vec<f64> = xt.iter().zip(&g2).map(|(a, g)| a + (big_t - t).sqrt() * g).collect();
        let p = Projector::new(&xt, 1, &RegressionBasis::default()).unwrap();
        let fit = p.fit(&xtt).unwrap();
        let fitted = p.fitted(&fit);
        let err = crate::stats::MeanEstimate::from_fn(n, |i| fitted[i] - xt[i]);
        assert!(err.mean.abs() < 0.01);
        // residuals are N(0, T−t); their sample RMS has SE ≈ σ/√(2n).
        let sd = (big_t - t).sqrt();
        assert!((fit.residual_rms - sd).abs() < 3.0 * sd / (2.0 * n as f64).sqrt() + 4.0 / n as f64);
    }

    #[test]
    fn predictions_match_fitted_values() {
        let x = normals(1000, 6);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let p = Projector::new(&x, 1, &RegressionBasis::default()).unwrap();
        let fit = p.fit(&y).unwrap();
        let fitted = p.fitted(&fit);
        for i in (0..1000).step_by(97) {
            assert!((fit.predict(&[x[i]]) - fitted[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn hats_track_a_smooth_target() {
        let x = normals(100_000, 7);
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let p = Projector::new(&x, 1, &RegressionBasis::piecewise_linear(32, 1e-8).unwrap()).unwrap();
        let fitted = p.project(&y).unwrap();
        let err = |range: f64| {
            (0..x.len())
                .filter(|&i| x[i].abs() < range)
                .map(|i| (fitted[i] - y[i]).abs())
                .fold(0.0, f64::max)
        };
        assert!(err(2.0) < 0.015, "{}", err(2.0));
        assert!(err(f64::INFINITY) < 0.05, "{}", err(f64::INFINITY));
    }
}
