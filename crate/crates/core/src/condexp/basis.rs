use serde::{Deserialize, Serialize};

use crate::stats::ordered_fold;
use crate::{Error, Result};

/// Family of regression features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Monomials of total degree at most `degree` in standardised coordinates.
    #[default]
    Polynomial,
    /// Tensor products of piecewise-linear hat functions per coordinate. The
    /// interior knots are `knots − 2` empirical quantiles between levels
    /// `1/(2·knots)` and `1 − 1/(2·knots)`; the sample extremes close the range,
    /// and every gap holding samples is split evenly into pieces no wider than
    /// twice the mean interior spacing.
    /// Values are extended as constants outside the sample range.
    PiecewiseLinear,
}

/// Regression basis with a ridge penalty on every feature but the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub degree: usize,
    pub knots: usize,
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            kind: BasisKind::Polynomial,
            degree: 3,
            knots: 32,
            ridge: 1e-8,
        }
    }
}

impl RegressionBasis {
    /// Polynomial basis of the given total degree.
    pub fn new(degree: usize, ridge: f64) -> Result<Self> {
        let b = Self {
            degree,
            ridge,
            ..Self::default()
        };
        b.validate()?;
        Ok(b)
    }

    pub fn piecewise_linear(knots: usize, ridge: f64) -> Result<Self> {
        let b = Self {
            kind: BasisKind::PiecewiseLinear,
            knots,
            ridge,
            ..Self::default()
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::invalid(format!("ridge must be finite and nonnegative, got {}", self.ridge)));
        }
        match self.kind {
            BasisKind::Polynomial if self.degree > 12 => Err(Error::invalid(format!(
                "polynomial degree {} is above the supported 12",
                self.degree
            ))),
            BasisKind::PiecewiseLinear if !(3..=512).contains(&self.knots) => {
                Err(Error::invalid(format!("knot count {} must lie in 3..=512", self.knots)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
enum Family {
    /// Exponents, `n_features × active`, row-major.
    Monomials { degree: usize, exponents: Vec<u8> },
    /// Sorted distinct knots per active coordinate.
    Hats { knots: Vec<Vec<f64>> },
}

/// Feature map fitted to a sample. Constant coordinates are dropped, and
/// feature 0 is always the constant 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMap {
    dim: usize,
    active: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
    family: Family,
    n_features: usize,
}

fn monomials(vars: usize, degree: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; vars]];
    for total in 1..=degree {
        let mut cur = vec![0u8; vars];
        push_compositions(&mut out, &mut cur, 0, total);
    }
    out
}

fn push_compositions(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, left: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = left as u8;
        out.push(cur.clone());
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k as u8;
        push_compositions(out, cur, pos + 1, left - k);
    }
    cur[pos] = 0;
}

/// Interval index `j` and weight of the right knot for `x` clamped to the knot range.
#[inline]
fn locate(knots: &[f64], x: f64) -> (usize, f64) {
    let last = knots.len() - 1;
    if x <= knots[0] {
        return (0, 0.0);
    }
    if x >= knots[last] {
        return (last - 1, 1.0);
    }
    let j = knots.partition_point(|k| *k <= x) - 1;
    (j, (x - knots[j]) / (knots[j + 1] - knots[j]))
}

impl FeatureMap {
    /// Fit the map to `states` (`n × dim`, row-major).
    pub fn fit(states: &[f64], dim: usize, basis: &RegressionBasis) -> Self {
        let n = if dim == 0 { 0 } else { states.len() / dim };
        let mut center = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        let mut active = Vec::new();
        if n > 0 {
            let sums = ordered_fold(n, dim, || (), |_, i, acc| {
                for (a, v) in acc.iter_mut().zip(&states[i * dim..(i + 1) * dim]) {
                    *a += v;
                }
            });
            for (c, s) in center.iter_mut().zip(&sums) {
                *c = s / n as f64;
            }
            let ss = ordered_fold(n, dim, || (), |_, i, acc| {
                for k in 0..dim {
                    let d = states[i * dim + k] - center[k];
                    acc[k] += d * d;
                }
            });
            for k in 0..dim {
                let sd = (ss[k] / n as f64).sqrt();
                if sd > 1e-12 * center[k].abs().max(1.0) {
                    scale[k] = sd;
                    active.push(k);
                }
            }
        }
        let vars = active.len();
        let (family, n_features) = match basis.kind {
            BasisKind::Polynomial => {
                let exponents = if vars == 0 { Vec::new() } else { monomials(vars, basis.degree).concat() };
                let nf = if vars == 0 { 1 } else { exponents.len() / vars };
                (
                    Family::Monomials {
                        degree: basis.degree,
                        exponents,
                    },
                    nf,
                )
            }
            BasisKind::PiecewiseLinear => {
                let knots: Vec<Vec<f64>> = active
                    .iter()
                    .map(|&k| {
                        let col: Vec<f64> = (0..n).map(|i| states[i * dim + k]).collect();
                        let mut sorted = col;
                        sorted.sort_by(|a, b| a.total_cmp(b));
                        let trim = 0.5 / basis.knots as f64;
                        let inner = basis.knots - 2;
                        let span = (inner - 1).max(1) as f64;
                        let q: Vec<f64> = if inner == 1 {
                            vec![quantile_sorted(&sorted, 0.5)]
                        } else {
                            (0..inner)
                                .map(|j| quantile_sorted(&sorted, trim + (1.0 - 2.0 * trim) * j as f64 / span))
                                .collect()
                        };
                        let cap = 2.0 * (q[inner - 1] - q[0]) / span;
                        let raw: Vec<f64> = std::iter::once(sorted[0])
                            .chain(q)
                            .chain(std::iter::once(sorted[n - 1]))
                            .collect();
                        let mut kn = vec![raw[0]];
                        for w in raw.windows(2) {
                            let occupied = sorted.partition_point(|v| *v <= w[0]) < sorted.partition_point(|v| *v < w[1]);
                            let pieces = if occupied && cap > 0.0 { ((w[1] - w[0]) / cap).ceil().max(1.0) as usize } else { 1 };
                            for s in 1..=pieces {
                                kn.push(w[0] + (w[1] - w[0]) * s as f64 / pieces as f64);
                            }
                        }
                        kn.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
                        kn
                    })
                    .collect();
                let nf = if vars == 0 { 1 } else { knots.iter().map(Vec::len).product() };
                (Family::Hats { knots }, nf)
            }
        };
        Self {
            dim,
            active,
            center,
            scale,
            family,
            n_features,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coordinates that carry variation in the fitting sample.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Scratch length needed by [`FeatureMap::eval_into`].
    pub fn scratch_len(&self) -> usize {
        match &self.family {
            Family::Monomials { degree, .. } => self.active.len() * (degree + 1),
            Family::Hats { .. } => 2 * self.active.len(),
        }
    }

    /// Write `φ(x)` into `out` (length `n_features`) using `pow` as scratch.
    pub fn eval_into(&self, x: &[f64], pow: &mut [f64], out: &mut [f64]) {
        let vars = self.active.len();
        if vars == 0 {
            out[0] = 1.0;
            return;
        }
        match &self.family {
            Family::Monomials { degree, exponents } => {
                let d1 = degree + 1;
                for (j, &k) in self.active.iter().enumerate() {
                    let z = (x[k] - self.center[k]) / self.scale[k];
                    let row = &mut pow[j * d1..(j + 1) * d1];
                    row[0] = 1.0;
                    for e in 1..d1 {
                        row[e] = row[e - 1] * z;
                    }
                }
                for (f, exps) in out.iter_mut().zip(exponents.chunks_exact(vars)) {
                    let mut v = 1.0;
                    for (j, &e) in exps.iter().enumerate() {
                        if e > 0 {
                            v *= pow[j * d1 + e as usize];
                        }
                    }
                    *f = v;
                }
            }
            Family::Hats { knots } => {
                out.fill(0.0);
                // pow holds (interval, right weight) per coordinate.
                for (j, &k) in self.active.iter().enumerate() {
                    let (iv, w) = locate(&knots[j], x[k]);
                    pow[2 * j] = iv as f64;
                    pow[2 * j + 1] = w;
                }
                // Visit the 2^vars corners of the active cell.
                for corner in 0..(1usize << vars) {
                    let mut idx = 0;
                    let mut v = 1.0;
                    for j in 0..vars {
                        let right = (corner >> j) & 1 == 1;
                        let iv = pow[2 * j] as usize;
                        let w = pow[2 * j + 1];
                        v *= if right { w } else { 1.0 - w };
                        idx = idx * knots[j].len() + iv + right as usize;
                    }
                    out[idx] += v;
                }
                // The hats sum to one; replacing the first by the constant keeps the span.
                out[0] = 1.0;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut pow = vec![0.0; self.scratch_len()];
        let mut out = vec![0.0; self.n_features()];
        self.eval_into(x, &mut pow, &mut out);
        out
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}
