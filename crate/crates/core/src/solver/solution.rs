use serde::Serialize;

use crate::condexp::FitResult;
use crate::field::NodeField;
use crate::forward::TimeGrid;
use crate::stats::MeanEstimate;

/// Outer-iteration history on one window `[t_lo, t_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowTrace {
    pub start_node: usize,
    pub end_node: usize,
    pub start_time: f64,
    pub end_time: f64,
    /// Weighted sup distance between successive iterates.
    pub sup_distances: Vec<f64>,
    /// `S^p` distance between successive iterates.
    pub sp_distances: Vec<f64>,
    pub converged: bool,
}

impl WindowTrace {
    pub fn iterations(&self) -> usize {
        self.sup_distances.len()
    }

    /// Ratios `d_{k+1} / d_k` of successive sup distances (pairs with `d_k = 0` are skipped).
    pub fn ratios(&self) -> Vec<f64> {
        self.sup_distances
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Discrete solution `(Y, Z, ψ)` on a path bundle.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteSolution {
    pub grid: TimeGrid,
    pub start_node: usize,
    /// `Y[node][path]`.
    pub y: NodeField,
    /// `Z[node][path] ∈ ℝ^d`; zero at the terminal node and on the frozen prefix.
    pub z: NodeField,
    /// `ψ[node][path][mark]` at the quadrature marks.
    pub psi: NodeField,
    /// Driver value used at each node (zero at the terminal node).
    pub driver_values: NodeField,
    /// Fit of `Y_i` as a function of `X_i` (the tabulated `u(t_i, ·)`).
    #[serde(skip)]
    pub y_fits: Vec<Option<FitResult>>,
    #[serde(skip)]
    pub z_fits: Vec<Vec<FitResult>>,
    pub traces: Vec<WindowTrace>,
    pub truncation: Option<f64>,
}

impl DiscreteSolution {
    /// `Y` at the start node, which is deterministic.
    pub fn initial_value(&self) -> f64 {
        self.y.value(self.start_node, 0)
    }

    /// Monte Carlo standard error of [`DiscreteSolution::initial_value`]:
    /// the projections preserve means, so `Y_t` is the sample mean of
    /// `ξ + Σ Δ_i f_i` along each path.
    pub fn initial_value_estimate(&self) -> MeanEstimate {
        let n = self.grid.n_steps();
        let lo = self.start_node;
        MeanEstimate::from_fn(self.y.paths(), |p| {
            self.y.value(n, p) + (lo..n).map(|i| self.grid.step(i) * self.driver_values.value(i, p)).sum::<f64>()
        })
    }

    pub fn n_paths(&self) -> usize {
        self.y.paths()
    }

    /// Sup over nodes and paths of `|Y|`.
    pub fn y_sup(&self) -> f64 {
        self.y.max_abs()
    }

    /// Total outer iterations over all windows.
    pub fn total_iterations(&self) -> usize {
        self.traces.iter().map(WindowTrace::iterations).sum()
    }

    pub fn converged(&self) -> bool {
        self.traces.iter().all(|t| t.converged)
    }
}

/// Sup over nodes and paths of `|a − b|`.
pub fn sup_distance(a: &NodeField, b: &NodeField) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
