//! Small statistical helpers shared by the estimators and checks.
//!
//! Reductions over paths are performed in fixed-size chunks whose partial sums
//! are combined in chunk order, so results do not depend on the thread count.

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 2048;

/// Sum of `f(i)` for `i in 0..n`, reproducible under any rayon pool size.
pub fn ordered_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            (lo..hi).map(&f).sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

/// Vector-valued version of [`ordered_sum`]: `f(scratch, i, acc)` adds the
/// contribution of item `i` into `acc` (length `width`).
pub fn ordered_fold<S, I, F>(n: usize, width: usize, init: I, f: F) -> Vec<f64>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [f64]) + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = init();
            let mut acc = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(&mut scratch, i, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; width];
    for p in &partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i| values[i])
    }

    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(usize) -> f64 + Sync,
    {
        if n == 0 {
            return Self {
                mean: 0.0,
                std_error: 0.0,
            };
        }
        let mean = ordered_sum(n, &f) / n as f64;
        if n == 1 {
            return Self {
                mean,
                std_error: 0.0,
            };
        }
        let ss = ordered_sum(n, |i| {
            let d = f(i) - mean;
            d * d
        });
        let var = ss / (n - 1) as f64;
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
        }
    }

    /// True when `target` lies within `k` standard errors of the mean.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + 1e-12 * (1.0 + target.abs())
    }
}

/// Empirical quantile with linear interpolation; `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_sum_matches_serial() {
        let n = 10_000;
        let s = ordered_sum(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
    }

    #[test]
    fn ordered_fold_is_pool_independent() {
        let n = 9_001;
        let run = || ordered_fold(n, 2, || (), |_, i, acc| {
            acc[0] += (i as f64).sqrt();
            acc[1] += 1.0;
        });
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(run);
        assert_eq!(a, b);
        assert_eq!(a[1], n as f64);
    }

    #[test]
    fn mean_estimate_of_constant_has_zero_error() {
        let m = MeanEstimate::from_values(&[2.5; 10]);
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.std_error, 0.0);
    }

    #[test]
    fn quantile_endpoints() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 3.0);
        assert_eq!(quantile(&v, 0.5), 2.0);
    }

    #[test]
    fn slope_of_line() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [1.0, 3.0, 5.0];
        assert!((ols_slope(&xs, &ys) - 2.0).abs() < 1e-15);
    }
}
