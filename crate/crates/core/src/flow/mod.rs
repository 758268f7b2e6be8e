//! Lagrangian flows: marker trajectories solving the nonlocal SDE.

pub mod diagnostics;
pub mod drift;
pub mod solver;
pub mod state;

pub use diagnostics::{
    bound_domination, fit_iteration_constants, holder_regression, measure_preservation_check,
    rho_profiles, space_increment_moment, time_increment_moment, HolderFit, IterationFit,
    MeasurePreservation,
};
pub use drift::{marker_weights, DriftMode, DriftPlan};
pub use solver::{
    direct_self_consistent_solve, flow_distance, picard_map, picard_trace, solve_euler_flow,
    solve_linear_flow, Drift, FieldDrift, FrozenFlowDrift, PicardConfig, PicardReport, Scheme,
    SelfDrift, SolverConfig, WindowReport, ZeroDrift,
};
pub use state::FlowState;
