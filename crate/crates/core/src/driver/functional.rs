use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::NodeField;
use crate::forward::TimeGrid;
use crate::{Error, Result};

/// Map from the future values `(Y_{t_i}, …, Y_{t_N})` and their times to a scalar.
pub type GridFunctionalFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// The path functional through which a driver looks at the future of `Y`.
#[derive(Clone)]
pub enum AnticipatedFunctional {
    None,
    /// `sup_{v ∈ [r, T]} |Y_v|`, read on the grid nodes after `r` so the
    /// scheme stays explicit; at `T` it is `|Y_T|`.
    RunningSupAbs,
    /// `Y_{(r + θ) ∧ T}`, read at the first grid node at or after `r + θ`.
    DeferredValue { lag: f64 },
    /// `∫_r^T Y_v dv` by the trapezoidal rule on the grid.
    PathIntegral,
    /// User-supplied functional with a declared sup-norm Lipschitz constant.
    Custom {
        name: String,
        eval: GridFunctionalFn,
        lipschitz: f64,
    },
}

impl fmt::Debug for AnticipatedFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "None"),
            Self::RunningSupAbs => write!(f, "RunningSupAbs"),
            Self::DeferredValue { lag } => write!(f, "DeferredValue({lag})"),
            Self::PathIntegral => write!(f, "PathIntegral"),
            Self::Custom { name, lipschitz, .. } => write!(f, "Custom({name}, L={lipschitz})"),
        }
    }
}

impl AnticipatedFunctional {
    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    pub fn name(&self) -> String {
        match self {
            Self::None => "none".into(),
            Self::RunningSupAbs => "running_sup_abs".into(),
            Self::DeferredValue { lag } => format!("deferred_value({lag})"),
            Self::PathIntegral => "path_integral".into(),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    /// Lipschitz constant with respect to the sup-norm of the future path.
    pub fn lipschitz(&self, horizon: f64) -> f64 {
        match self {
            Self::None => 0.0,
            Self::RunningSupAbs | Self::DeferredValue { .. } => 1.0,
            Self::PathIntegral => horizon,
            Self::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// Evaluate at node `node` on `future = (Y_node, …, Y_N)`.
    pub fn evaluate(&self, grid: &TimeGrid, node: usize, future: &[f64]) -> f64 {
        debug_assert_eq!(future.len(), grid.n_nodes() - node);
        match self {
            Self::None => 0.0,
            Self::RunningSupAbs => future[future.len().min(2) - 1..].iter().fold(0.0, |m, v| m.max(v.abs())),
            Self::DeferredValue { lag } => future[grid.advance(node, *lag) - node],
            Self::PathIntegral => (0..future.len() - 1)
                .map(|j| 0.5 * (future[j] + future[j + 1]) * grid.step(node + j))
                .sum(),
            Self::Custom { eval, .. } => eval(future, &grid.nodes()[node..]),
        }
    }

    /// Raw pathwise values at every node in `lo..hi` for every path, computed
    /// from `y` after clamping each value to `[−m, m]` when `clamp = Some(m)`.
    ///
    /// Rows outside `lo..hi` are left at zero.
    pub fn pathwise_table(
        &self,
        grid: &TimeGrid,
        y: &NodeField,
        lo: usize,
        hi: usize,
        clamp: Option<f64>,
    ) -> NodeField {
        let n_nodes = grid.n_nodes();
        let paths = y.paths();
        let mut out = NodeField::zeros(n_nodes, paths, 1);
        let c = |v: f64| match clamp {
            Some(m) => v.clamp(-m, m),
            None => v,
        };
        match self {
            Self::None => {}
            Self::RunningSupAbs => {
                for p in 0..paths {
                    let mut run: f64 = 0.0;
                    for j in (lo..n_nodes).rev() {
                        let here = c(y.value(j, p)).abs();
                        if j < hi {
                            out.set_value(j, p, if j + 1 == n_nodes { here } else { run });
                        }
                        run = run.max(here);
                    }
                }
            }
            Self::PathIntegral => {
                for p in 0..paths {
                    let mut acc = 0.0;
                    for j in (lo..n_nodes - 1).rev() {
                        acc += 0.5 * (c(y.value(j, p)) + c(y.value(j + 1, p))) * grid.step(j);
                        if j < hi {
                            out.set_value(j, p, acc);
                        }
                    }
                }
            }
            Self::DeferredValue { lag } => {
                for j in lo..hi {
                    let k = grid.advance(j, *lag);
                    for p in 0..paths {
                        out.set_value(j, p, c(y.value(k, p)));
                    }
                }
            }
            Self::Custom { .. } => {
                let mut buf = Vec::with_capacity(n_nodes);
                for j in lo..hi {
                    for p in 0..paths {
                        buf.clear();
                        buf.extend((j..n_nodes).map(|k| c(y.value(k, p))));
                        out.set_value(j, p, self.evaluate(grid, j, &buf));
                    }
                }
            }
        }
        out
    }

    /// Check the declared sup-norm Lipschitz constant on random probe paths.
    ///
    /// Returns the worst observed ratio `|F(q) − F(q')| / sup|q − q'|`.
    pub fn check_lipschitz(&self, grid: &TimeGrid, n_probes: usize, radius: f64, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let declared = self.lipschitz(grid.horizon());
        let mut worst: f64 = 0.0;
        for _ in 0..n_probes {
            let node = rng.random_range(0..grid.n_nodes());
            let len = grid.n_nodes() - node;
            let q: Vec<f64> = (0..len).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let qp: Vec<f64> = q
                .iter()
                .map(|v| v + 0.1 * radius * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let dist = q.iter().zip(&qp).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if dist == 0.0 {
                continue;
            }
            let ratio = (self.evaluate(grid, node, &q) - self.evaluate(grid, node, &qp)).abs() / dist;
            worst = worst.max(ratio);
        }
        if worst > declared * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Precondition(format!(
                "functional {} has probe Lipschitz ratio {worst} above declared {declared}",
                self.name()
            )));
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::uniform(1.0, 4).unwrap()
    }

    #[test]
    fn evaluate_builtins() {
        let g = grid();
        let fut = [3.0, -5.0, 1.0];
        assert_eq!(AnticipatedFunctional::RunningSupAbs.evaluate(&g, 2, &fut), 5.0);
        assert_eq!(AnticipatedFunctional::DeferredValue { lag: 0.25 }.evaluate(&g, 2, &fut), -5.0);
        assert_eq!(AnticipatedFunctional::DeferredValue { lag: 10.0 }.evaluate(&g, 2, &fut), 1.0);
        let integral = AnticipatedFunctional::PathIntegral.evaluate(&g, 2, &fut);
        assert!((integral - (0.5 * (3.0 - 5.0) * 0.25 + 0.5 * (-5.0 + 1.0) * 0.25)).abs() < 1e-15);
        assert_eq!(AnticipatedFunctional::None.evaluate(&g, 2, &fut), 0.0);
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let g = grid();
        let mut y = NodeField::zeros(5, 2, 1);
        let vals = [[0.5, -2.0], [1.5, 0.3], [-0.7, 0.9], [2.5, -0.1], [0.2, 0.4]];
        for (i, row) in vals.iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                y.set_value(i, p, *v);
            }
        }
        let f = AnticipatedFunctional::Custom {
            name: "first_plus_last".into(),
            eval: Arc::new(|v, _| v[0] + v[v.len() - 1]),
            lipschitz: 2.0,
        };
        for func in [
            AnticipatedFunctional::RunningSupAbs,
            AnticipatedFunctional::PathIntegral,
            AnticipatedFunctional::DeferredValue { lag: 0.5 },
            f,
        ] {
            for clamp in [None, Some(1.0)] {
                let t = func.pathwise_table(&g, &y, 1, 5, clamp);
                for i in 1..5 {
                    for p in 0..2 {
                        let fut: Vec<f64> = (i..5)
                            .map(|k| clamp.map_or(y.value(k, p), |m| y.value(k, p).clamp(-m, m)))
                            .collect();
                        let direct = func.evaluate(&g, i, &fut);
                        assert!((t.value(i, p) - direct).abs() < 1e-14, "{func:?} {i} {p}");
                    }
                }
                assert_eq!(t.value(0, 0), 0.0);
            }
        }
    }

    #[test]
    fn lipschitz_probe_catches_bad_declaration() {
        let g = grid();
        assert!(AnticipatedFunctional::RunningSupAbs.check_lipschitz(&g, 100, 2.0, 1).is_ok());
        assert!(AnticipatedFunctional::PathIntegral.check_lipschitz(&g, 100, 2.0, 1).is_ok());
        let bad = AnticipatedFunctional::Custom {
            name: "sum".into(),
            eval: Arc::new(|v, _| v.iter().sum()),
            lipschitz: 1.0,
        };
        assert!(bad.check_lipschitz(&g, 100, 2.0, 1).is_err());
    }
}
