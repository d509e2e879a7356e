//! Regression estimators of conditional expectations: the projection onto
//! polynomial features of the current state, the anticipated functional, and
//! the `Z`/`ψ` extraction formulas.

mod basis;
mod ops;
mod projector;

pub use basis::{BasisKind, FeatureMap, RegressionBasis};
pub use ops::{
    estimate_anticipated, estimate_anticipated_on, extract_psi, extract_z, extract_z_fits, extract_z_on, interleave,
    psi_l2_sq,
};
pub use projector::{fit_conditional, FitResult, PredictScratch, Projector};
