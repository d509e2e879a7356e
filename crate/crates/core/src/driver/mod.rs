//! Anticipated drivers, the quadratic-exponential structure data, the
//! truncation operator `f ↦ f_m`, and sampling validators for the driver
//! assumptions.

mod checks;
mod functional;
mod params;
pub mod scenarios;
mod spec;

pub use checks::{
    check_a_gamma, check_structure_condition, AGammaReport, DriverProbe, ProbeSet, StructureReport,
};
pub use functional::{AnticipatedFunctional, GridFunctionalFn};
pub use params::{j_gamma, truncate_value, BoundParamsA, StructureParams};
pub use spec::{
    regularize_driver, DriverInput, DriverScratch, DriverSpec, GammaContext, GammaFn, GammaKernel,
    GeneratorFn, LocalLipschitzFn, TerminalCondition, TerminalFn,
};
