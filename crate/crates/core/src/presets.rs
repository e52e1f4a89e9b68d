//! Built-in configurations for the synthetic case study.
//!
//! Delay pmfs list P[D = 0..3]; longer horizons pad them with zeros.

use crate::model::{
    DgpSpec, Extrapolation, Method, Objective, OutcomeFamily, Planner, StratumParams, TrialConfig,
};

pub const PRESET_NAMES: [&str; 3] = ["setup1_sex", "setup2_sex", "setup1_sex_who"];

const PMF_F: [[f64; 4]; 2] = [[0.63, 0.18, 0.05, 0.02], [0.64, 0.18, 0.07, 0.03]];
const PMF_M: [[f64; 4]; 2] = [[0.54, 0.11, 0.21, 0.01], [0.55, 0.23, 0.10, 0.02]];

fn padded(pmf: &[f64; 4], horizon: usize) -> Vec<f64> {
    (0..horizon).map(|d| pmf.get(d).copied().unwrap_or(0.0)).collect()
}

fn stratum(label: &str, p: f64, mu: [f64; 2], sigma: [f64; 2], pmf: &[[f64; 4]; 2], horizon: usize) -> StratumParams {
    StratumParams {
        label: label.to_string(),
        p,
        mu,
        sigma,
        delay_pmf: [padded(&pmf[0], horizon), padded(&pmf[1], horizon)],
    }
}

fn config(horizon: usize, objective: Objective, dgp: DgpSpec) -> TrialConfig {
    TrialConfig {
        horizon,
        stage_sizes: vec![100; horizon],
        strata: Vec::new(),
        delta: 0.1,
        objective,
        extrapolation: Extrapolation::Conservative,
        planner: Planner::Forward,
        method: Method::Proposed,
        power_constraint_c: None,
        alpha: 0.05,
        seed: 0,
        dbcd_gamma: 2.0,
        outcome_family: None,
        dgp: Some(dgp),
    }
}

/// Normal outcomes stratified by sex; power maximization.
pub fn setup1_sex(horizon: usize) -> TrialConfig {
    let dgp = DgpSpec {
        outcome_family: OutcomeFamily::Normal,
        strata: vec![
            stratum("F", 0.64, [2.98, 2.50], [2.06, 0.36], &PMF_F, horizon),
            stratum("M", 0.36, [2.72, 2.47], [0.31, 0.82], &PMF_M, horizon),
        ],
        perturb_stratum: Some("M".into()),
    };
    config(horizon, Objective::PowerMax, dgp)
}

/// Bernoulli outcomes stratified by sex; failure reduction.
pub fn setup2_sex(horizon: usize) -> TrialConfig {
    let dgp = DgpSpec {
        outcome_family: OutcomeFamily::Bernoulli,
        strata: vec![
            stratum("F", 0.64, [0.57, 0.78], [0.0, 0.0], &PMF_F, horizon),
            stratum("M", 0.36, [0.63, 0.84], [0.0, 0.0], &PMF_M, horizon),
        ],
        // the control mean of M cannot reach a zero effect inside [0, 1]
        perturb_stratum: Some("F".into()),
    };
    config(horizon, Objective::FailureReduction, dgp)
}

/// Normal outcomes over four sex-by-WHO-stage strata.
///
/// Only σ and the delay pmfs are given per stratum; frequencies split each
/// sex evenly and means reuse the sex-level values (S1, S3 male; S2, S4 female).
pub fn setup1_sex_who(horizon: usize) -> TrialConfig {
    let pmf = |p1: [f64; 4], p0: [f64; 4]| [p0, p1];
    let dgp = DgpSpec {
        outcome_family: OutcomeFamily::Normal,
        strata: vec![
            stratum(
                "S1",
                0.18,
                [2.72, 2.47],
                [1.87, 1.63],
                &pmf([0.10, 0.15, 0.32, 0.04], [0.03, 0.10, 0.22, 0.30]),
                horizon,
            ),
            stratum(
                "S2",
                0.32,
                [2.98, 2.50],
                [1.90, 1.85],
                &pmf([0.14, 0.16, 0.21, 0.05], [0.10, 0.14, 0.17, 0.06]),
                horizon,
            ),
            stratum(
                "S3",
                0.18,
                [2.72, 2.47],
                [1.63, 2.37],
                &pmf([0.10, 0.19, 0.21, 0.14], [0.11, 0.16, 0.19, 0.09]),
                horizon,
            ),
            stratum(
                "S4",
                0.32,
                [2.98, 2.50],
                [2.14, 1.73],
                &pmf([0.05, 0.20, 0.17, 0.18], [0.19, 0.08, 0.24, 0.02]),
                horizon,
            ),
        ],
        perturb_stratum: Some("S1".into()),
    };
    config(horizon, Objective::PowerMax, dgp)
}

pub fn preset(name: &str, horizon: usize) -> Option<TrialConfig> {
    match name {
        "setup1_sex" => Some(setup1_sex(horizon)),
        "setup2_sex" => Some(setup2_sex(horizon)),
        "setup1_sex_who" => Some(setup1_sex_who(horizon)),
        _ => None,
    }
}
