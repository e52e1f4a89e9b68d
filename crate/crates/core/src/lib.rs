//! Covariate-adjusted response-adaptive (CARA) designs for multi-stage trials
//! with delayed outcomes.
//!
//! The crate estimates delay distributions and outcome moments at each interim,
//! plans the remaining stages' allocation probabilities per stratum, runs
//! simulated or replayed trials and reports post-trial inference.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod history;
pub mod inference;
pub mod model;
pub mod objectives;
pub mod presets;
pub mod solver;

pub use engine::{run_trial, TrialResult, TrialState};
pub use error::{CaraError, Flag, Result};
pub use estimation::{build_snapshot, InterimSnapshot};
pub use inference::{infer, InferenceReport};
pub use model::{
    AllocationPlan, Arm, Delay, DelayCdf, DgpSpec, Extrapolation, Method, Objective, OutcomeFamily,
    ParticipantRecord, Planner, TrialConfig,
};
