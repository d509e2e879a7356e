//! Regression Monte Carlo laboratory for anticipated backward SDEs with jumps
//! and quadratic-exponential growth drivers.
//!
//! The crate is organised bottom-up:
//!
//! * [`forward`] simulates the Lipschitz jump-diffusion and checks its moment laws.
//! * [`driver`] holds anticipated drivers, the truncation operator and assumption validators.
//! * [`condexp`] estimates conditional expectations by least-squares regression.
//! * [`solver`] runs the backward sweep, Picard/windowed fixed points and the truncation cascade.
//! * [`norms`] estimates the S/H/J/BMO norms of a discrete solution.
//! * [`verify`] evaluates the closed-form a priori bounds and runs the theorem experiments.
//! * [`cli`] drives configuration-based experiments and emits result tables.

pub mod cli;
pub mod condexp;
pub mod driver;
pub mod error;
pub mod field;
pub mod forward;
pub mod norms;
pub mod solver;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
