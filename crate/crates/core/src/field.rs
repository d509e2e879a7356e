//! Node-major storage for per-path quantities on a time grid.

use serde::Serialize;

/// Values indexed by `(node, path)` with a fixed number of components per entry.
///
/// Layout is node-major so that all paths at one node are contiguous, which is
/// what the per-node regressions consume.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeField {
    nodes: usize,
    paths: usize,
    width: usize,
    data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(nodes: usize, paths: usize, width: usize) -> Self {
        Self::filled(nodes, paths, width, 0.0)
    }

    pub fn filled(nodes: usize, paths: usize, width: usize, value: f64) -> Self {
        Self {
            nodes,
            paths,
            width,
            data: vec![value; nodes * paths * width],
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, node: usize, path: usize) -> &[f64] {
        let start = (node * self.paths + path) * self.width;
        &self.data[start..start + self.width]
    }

    #[inline]
    pub fn get_mut(&mut self, node: usize, path: usize) -> &mut [f64] {
        let start = (node * self.paths + path) * self.width;
        &mut self.data[start..start + self.width]
    }

    /// Scalar accessor for width-one fields.
    #[inline]
    pub fn value(&self, node: usize, path: usize) -> f64 {
        self.data[(node * self.paths + path) * self.width]
    }

    #[inline]
    pub fn set_value(&mut self, node: usize, path: usize, v: f64) {
        self.data[(node * self.paths + path) * self.width] = v;
    }

    /// All entries at one node, `paths * width` long.
    pub fn node(&self, node: usize) -> &[f64] {
        let len = self.paths * self.width;
        &self.data[node * len..(node + 1) * len]
    }

    pub fn node_mut(&mut self, node: usize) -> &mut [f64] {
        let len = self.paths * self.width;
        &mut self.data[node * len..(node + 1) * len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nodes: self.nodes,
            paths: self.paths,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
