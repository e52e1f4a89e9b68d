//! Allocation solvers: the fractional program, its Lagrangian extension,
//! the interim planners and the classical baselines.

pub mod baselines;
pub mod fractional;
pub mod lagrangian;
pub mod onedim;
pub mod planner;

pub use baselines::{dbcd_smooth, neyman, rosenberger};
pub use fractional::{
    distance_to_polyline, solve_fractional, upper_boundary_vertices, BoundaryTag, FractionalProgram, SolveReport,
};
pub use lagrangian::{solve_lagrangian, LinearFractional};
pub use planner::{
    default_constraint, oracle_plan, solve_failure_reduction, solve_one_step, solve_power_max, stratum_program,
    OracleReport, PlanOutcome, StratumOracle,
};
