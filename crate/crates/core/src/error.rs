use serde::Serialize;
use thiserror::Error;

use crate::model::Arm;

/// One failed configuration invariant, addressed by its JSON field path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CaraError {
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("stage mismatch: expected records for stage {expected}, found stage {found}")]
    StageMismatch { expected: usize, found: usize },

    #[error("zero denominator for stratum {stratum}, arm {arm:?}: no chance of observing this arm")]
    ZeroDenominator { stratum: usize, arm: Arm },

    #[error("operation requires Bernoulli outcomes")]
    OutcomeFamily,

    #[error("invalid fractional program: {0}")]
    InvalidProgram(String),

    #[error("empty cell: stratum {stratum}, arm {arm:?} has no visible outcomes")]
    EmptyCell { stratum: usize, arm: Arm },

    #[error("trial already concluded after stage {0}")]
    TrialComplete(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, CaraError>;

/// Non-fatal conditions raised while estimating, planning or analysing.
///
/// Flags are data: they travel with snapshots and results so the Monte Carlo
/// harness can count degenerate replications instead of aborting them.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    /// An (x, a, lag) delay cell had no eligible participants.
    EmptyDelayCell { stratum: usize, arm: Arm, lag: usize },
    /// A moment cell had fewer than two visible outcomes.
    DegenerateVariance { stratum: usize, arm: Arm },
    /// A moment cell had no visible outcomes; fallback values were used.
    EmptyMomentCell { stratum: usize, arm: Arm },
    /// A configured stratum had no enrollees by the analysis stage.
    EmptyStratum { stratum: usize },
    /// A stage contributed nothing to either arm and was set to 0.5.
    DegenerateStage { stratum: usize, stage: usize },
    /// The per-stratum solve failed and the stratum fell back to 0.5.
    SolverFallback { stratum: usize, reason: String },
    /// The power constraint cannot be met even by the power-maximizing plan.
    InfeasibleConstraint,
    /// End-of-trial cell without visible outcomes; confidence interval suppressed.
    EmptyCell { stratum: usize, arm: Arm },
}
