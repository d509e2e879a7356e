//! Bound formulas and the experiment harness that checks solver output
//! against them.

mod bounds;
mod experiments;
mod regularity;

pub use bounds::{universal_bound_y, universal_bound_z_psi, BoundEvaluation};
pub use experiments::{
    check_universal_bounds, comparison_experiment, comparison_preconditions, m_convergence_check, picard_trace_check,
    solve_scenario, sp_distance, stability_experiment, uniqueness_proxy, ComparisonReport, MConvergenceReport,
    PicardReport, StabilityReport, UniquenessReport,
};
pub use regularity::{
    u_regularity_check, u_seed_spread_check, z_growth_check, GrowthTail, SeedSpreadReport, URegularityReport,
    ZGrowthReport,
};
