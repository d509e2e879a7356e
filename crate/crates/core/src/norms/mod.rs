//! Empirical norm estimators and the martingale checks built on them.
//!
//! Suprema over stopping times are replaced by suprema over grid times, so
//! every BMO-type estimate is a grid-sup under-approximation.

mod checks;
mod estimate;

pub use checks::{check_jump_norm_lemmas, doleans_check, energy_check, DoleansReport, EnergyReport, JumpNormCheck};
pub use estimate::{estimate_norms, estimate_norms_between, NormReport, PNorm, GRID_SUP_LABEL};
