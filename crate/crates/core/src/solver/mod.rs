//! Backward solvers: the explicit regression sweep, Picard iteration for
//! Lipschitz anticipated drivers, the windowed fixed point, the truncation
//! cascade for quadratic-exponential drivers, and the tabulated map `u`.

mod cascade;
mod config;
mod fixed_point;
mod solution;
mod sweep;
mod umap;

pub use cascade::{solve_qexp_absde, CascadeReport};
pub use config::{InitialGuess, SolverConfig};
pub use fixed_point::{pick_window, solve_lipschitz_absde, solve_windowed};
pub use solution::{sup_distance, DiscreteSolution, WindowTrace};
pub use sweep::backward_sweep;
pub use umap::{build_u_map, UCell, ULattice, UTable};

#[cfg(test)]
mod tests;
