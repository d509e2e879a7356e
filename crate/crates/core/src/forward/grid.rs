use serde::Serialize;

use crate::{Error, Result};

/// Strictly increasing time nodes `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

/// Tolerance used when snapping a time onto a grid node.
const SNAP_TOL: f64 = 1e-9;

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        let dt = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        nodes[steps] = horizon;
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("grid needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::invalid("grid must start at 0"));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::invalid("grid nodes must be finite and strictly increasing"));
            }
        }
        Ok(Self { nodes })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Number of steps `N`; there are `N + 1` nodes.
    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `t_{i+1} - t_i`.
    #[inline]
    pub fn step(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn min_step(&self) -> f64 {
        (0..self.n_steps()).map(|i| self.step(i)).fold(f64::INFINITY, f64::min)
    }

    /// Index of the node equal to `t` (up to a small tolerance), if any.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        let scale = SNAP_TOL * self.horizon().max(1.0);
        let idx = self.first_node_at_or_after(t - scale);
        (idx < self.nodes.len() && (self.nodes[idx] - t).abs() <= scale).then_some(idx)
    }

    /// Smallest index `j` with `t_j >= t`, or `N` when `t` exceeds the horizon.
    pub fn first_node_at_or_after(&self, t: f64) -> usize {
        self.nodes.partition_point(|&s| s < t).min(self.n_steps())
    }

    /// Node reached from node `i` after a time lag `lag`, clamped at the horizon.
    pub fn advance(&self, i: usize, lag: f64) -> usize {
        let target = self.nodes[i] + lag;
        let scale = SNAP_TOL * self.horizon().max(1.0);
        self.first_node_at_or_after(target - scale)
    }
}
