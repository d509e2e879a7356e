use rayon::prelude::*;
use serde::Serialize;

use super::cascade::solve_qexp_absde;
use super::config::SolverConfig;
use crate::condexp::RegressionBasis;
use crate::driver::DriverSpec;
use crate::forward::{simulate_paths, ForwardModel, MarkMeasureSpec, Start, TimeGrid};
use crate::{Error, Result};

/// Product lattice of start times and start states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ULattice {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl ULattice {
    /// `times × {x_k}` for scalar states.
    pub fn scalar(times: Vec<f64>, xs: &[f64]) -> Self {
        Self {
            times,
            states: xs.iter().map(|x| vec![*x]).collect(),
        }
    }
}

/// `u(t, x) = Y_t^{t,x}` at one lattice point, once per seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UCell {
    pub time: f64,
    pub state: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub error: Option<String>,
}

impl UCell {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UTable {
    pub lattice: ULattice,
    pub seeds: Vec<u64>,
    /// Row-major over `(time, state)`.
    pub cells: Vec<UCell>,
}

impl UTable {
    pub fn cell(&self, ti: usize, xi: usize) -> &UCell {
        &self.cells[ti * self.lattice.states.len() + xi]
    }

    /// Value for the first seed, or `None` for an invalid cell.
    pub fn value(&self, ti: usize, xi: usize) -> Option<f64> {
        let c = self.cell(ti, xi);
        c.is_valid().then(|| c.values[0])
    }

    pub fn invalid_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_valid()).count()
    }
}

/// Tabulate `u(t, x)` by solving from every lattice point.
///
/// All cells share each seed, so neighbouring cells use common random numbers.
/// Per-cell failures are recorded in the cell instead of aborting the table.
#[allow(clippy::too_many_arguments)]
pub fn build_u_map(
    driver: &DriverSpec,
    model: &ForwardModel,
    grid: &TimeGrid,
    marks: &MarkMeasureSpec,
    basis: &RegressionBasis,
    config: &SolverConfig,
    lattice: &ULattice,
    n_paths: usize,
    seeds: &[u64],
) -> Result<UTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    for &t in &lattice.times {
        if grid.node_at(t).is_none() {
            return Err(Error::invalid(format!("lattice time {t} is not a grid node")));
        }
    }
    let n_x = lattice.states.len();
    let cells = (0..lattice.times.len() * n_x)
        .into_par_iter()
        .map(|k| {
            let time = lattice.times[k / n_x];
            let state = lattice.states[k % n_x].clone();
            let mut cell = UCell {
                time,
                state: state.clone(),
                values: Vec::with_capacity(seeds.len()),
                std_errors: Vec::with_capacity(seeds.len()),
                error: None,
            };
            for &seed in seeds {
                let outcome = simulate_paths(model, grid, marks, &Start::new(time, state.clone()), n_paths, seed)
                    .and_then(|bundle| solve_qexp_absde(&bundle, driver, config, basis));
                match outcome {
                    Ok((sol, _)) => {
                        cell.values.push(sol.initial_value());
                        cell.std_errors.push(sol.initial_value_estimate().std_error);
                    }
                    Err(e) => {
                        cell.error = Some(e.to_string());
                        break;
                    }
                }
            }
            cell
        })
        .collect();
    Ok(UTable {
        lattice: lattice.clone(),
        seeds: seeds.to_vec(),
        cells,
    })
}
