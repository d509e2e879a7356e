//! Forward jump-diffusion: time grid, jump measure, coefficients, Euler paths,
//! and statistical checks of the standard moment estimates.

mod grid;
mod marks;
mod model;
mod moments;
mod paths;

pub use grid::TimeGrid;
pub use marks::{MarkAtom, MarkComponent, MarkMeasureSpec, QuadMark};
pub use model::{ForwardModel, LipschitzReport};
pub use moments::{
    check_moment_bounds, jump_integral_moment_check, JumpMomentReport, MomentConfig,
    MomentPairReport, MomentReport, StartPair,
};
pub use paths::{simulate_paths, JumpEvent, PathBundle, Start};
