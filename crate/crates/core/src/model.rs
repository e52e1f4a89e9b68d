//! Domain types shared by every stage of the design: participants, strata,
//! configuration, data-generating processes, allocation plans and delay CDFs.
//!
//! Stages are 1-based throughout the public API (stage `t` runs from 1 to
//! `T`); strata are addressed by their 0-based index into the configured
//! label list.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CaraError, Result, Violation};

/// Treatment arm of a two-arm experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_index(i: i64) -> Option<Arm> {
        match i {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

/// Number of stages until an outcome becomes visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Delay {
    Lag(u32),
    /// Never observed within the horizon.
    Censored,
}

impl Delay {
    pub fn lag(self) -> Option<usize> {
        match self {
            Delay::Lag(d) => Some(d as usize),
            Delay::Censored => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    pub index: usize,
}

/// One enrollee. The outcome is always stored; whether it is visible at an
/// analysis stage is computed by [`visible_at`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantRecord {
    pub id: u64,
    pub stage: usize,
    pub stratum: usize,
    pub arm: Arm,
    pub delay: Delay,
    pub outcome: f64,
}

impl ParticipantRecord {
    #[inline]
    pub fn visible_at(&self, t: usize) -> bool {
        visible_at(self, t)
    }
}

/// True iff the record's outcome has been revealed by the end of stage `t`.
#[inline]
pub fn visible_at(rec: &ParticipantRecord, t: usize) -> bool {
    match rec.delay {
        Delay::Lag(d) => rec.stage + d as usize <= t,
        Delay::Censored => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    PowerMax,
    FailureReduction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    #[default]
    Conservative,
    Optimistic,
    Neutral,
}

impl Extrapolation {
    pub const ALL: [Extrapolation; 3] = [
        Extrapolation::Conservative,
        Extrapolation::Optimistic,
        Extrapolation::Neutral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Extrapolation::Conservative => "conservative",
            Extrapolation::Optimistic => "optimistic",
            Extrapolation::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    #[default]
    Forward,
    OneStep,
}

/// How treatment probabilities are chosen after the pilot stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Proposed,
    ProposedDbcd,
    CompleteRandomization,
    /// Neyman allocation with the true standard deviations.
    Neyman,
    /// Failure-reduction rule with the true success probabilities.
    FrRule,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::ProposedDbcd => "proposed_dbcd",
            Method::CompleteRandomization => "complete_randomization",
            Method::Neyman => "neyman",
            Method::FrRule => "fr_rule",
        }
    }

    /// The four methods compared for a design objective.
    pub fn comparison_set(objective: Objective) -> [Method; 4] {
        match objective {
            Objective::PowerMax => [
                Method::Proposed,
                Method::ProposedDbcd,
                Method::CompleteRandomization,
                Method::Neyman,
            ],
            Objective::FailureReduction => [
                Method::Proposed,
                Method::ProposedDbcd,
                Method::CompleteRandomization,
                Method::FrRule,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    #[default]
    Normal,
    Bernoulli,
}

/// Per-stratum primitives of the simulated population. Arrays are indexed
/// by arm: `[control, treated]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumParams {
    pub label: String,
    /// Population frequency p(x).
    pub p: f64,
    pub mu: [f64; 2],
    /// Ignored for Bernoulli outcomes.
    #[serde(default)]
    pub sigma: [f64; 2],
    /// P[D = d] for d = 0, 1, ...; residual mass is never observed.
    pub delay_pmf: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub outcome_family: OutcomeFamily,
    pub strata: Vec<StratumParams>,
    /// Stratum whose control mean is shifted when sweeping the ATE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_stratum: Option<String>,
}

impl DgpSpec {
    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.strata.iter().map(|s| s.label.clone()).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.p).collect()
    }

    pub fn mean(&self, x: usize, arm: Arm) -> f64 {
        self.strata[x].mu[arm.index()]
    }

    pub fn sd(&self, x: usize, arm: Arm) -> f64 {
        match self.outcome_family {
            OutcomeFamily::Normal => self.strata[x].sigma[arm.index()],
            OutcomeFamily::Bernoulli => {
                let m = self.mean(x, arm);
                (m * (1.0 - m)).max(0.0).sqrt()
            }
        }
    }

    pub fn variance(&self, x: usize, arm: Arm) -> f64 {
        let s = self.sd(x, arm);
        s * s
    }

    pub fn tau_x(&self, x: usize) -> f64 {
        self.mean(x, Arm::Treated) - self.mean(x, Arm::Control)
    }

    /// Average treatment effect Σ p(x) τ(x).
    pub fn ate(&self) -> f64 {
        (0..self.n_strata()).map(|x| self.strata[x].p * self.tau_x(x)).sum()
    }

    /// True cumulative delay distribution truncated to lags 0..horizon-1.
    pub fn delay_cdf(&self, horizon: usize) -> DelayCdf {
        let mut cdf = DelayCdf::filled(horizon, self.n_strata(), 0.0);
        for (x, s) in self.strata.iter().enumerate() {
            for arm in Arm::BOTH {
                let pmf = &s.delay_pmf[arm.index()];
                let mut acc = 0.0;
                for d in 0..horizon {
                    acc += pmf.get(d).copied().unwrap_or(0.0);
                    cdf.set(d, x, arm, acc.min(1.0));
                }
            }
        }
        cdf
    }

    /// Copy with the designated stratum's control mean shifted so that the
    /// ATE equals `target`.
    pub fn with_ate(&self, target: f64) -> Result<DgpSpec> {
        let idx = match &self.perturb_stratum {
            Some(label) => self
                .strata
                .iter()
                .position(|s| &s.label == label)
                .ok_or_else(|| {
                    CaraError::InvalidConfig(vec![Violation::new(
                        "dgp.perturb_stratum",
                        format!("unknown stratum {label}"),
                    )])
                })?,
            None => self.n_strata() - 1,
        };
        let p = self.strata[idx].p;
        if p <= 0.0 {
            return Err(CaraError::InvalidConfig(vec![Violation::new(
                "dgp.perturb_stratum",
                "designated stratum has zero frequency",
            )]));
        }
        let mut out = self.clone();
        let shift = (target - self.ate()) / p;
        out.strata[idx].mu[Arm::Control.index()] -= shift;
        if self.outcome_family == OutcomeFamily::Bernoulli {
            let m = out.strata[idx].mu[Arm::Control.index()];
            if !(0.0..=1.0).contains(&m) {
                return Err(CaraError::InvalidConfig(vec![Violation::new(
                    format!("dgp.strata[{idx}].mu[0]"),
                    format!("ATE {target} needs success probability {m:.4} outside [0, 1]"),
                )]));
            }
        }
        Ok(out)
    }
}

fn default_delta() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    0.05
}
fn default_gamma() -> f64 {
    2.0
}

/// Everything needed to run or analyse one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    /// Number of stages T.
    pub horizon: usize,
    /// n_1, ..., n_T.
    pub stage_sizes: Vec<usize>,
    /// Stratum labels; taken from `dgp` when empty.
    #[serde(default)]
    pub strata: Vec<String>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub extrapolation: Extrapolation,
    #[serde(default)]
    pub planner: Planner,
    #[serde(default)]
    pub method: Method,
    /// Variance ceiling C for failure reduction; `None` means the
    /// complete-randomization level at each interim analysis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_constraint_c: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub dbcd_gamma: f64,
    /// Outcome family for real-data mode; the DGP's family wins when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_family: Option<OutcomeFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpSpec>,
}

impl TrialConfig {
    pub fn labels(&self) -> Vec<String> {
        if !self.strata.is_empty() {
            self.strata.clone()
        } else if let Some(dgp) = &self.dgp {
            dgp.labels()
        } else {
            Vec::new()
        }
    }

    pub fn strata(&self) -> Vec<Stratum> {
        self.labels()
            .into_iter()
            .enumerate()
            .map(|(index, label)| Stratum { label, index })
            .collect()
    }

    pub fn n_strata(&self) -> usize {
        self.labels().len()
    }

    pub fn family(&self) -> OutcomeFamily {
        self.dgp
            .as_ref()
            .map(|d| d.outcome_family)
            .or(self.outcome_family)
            .unwrap_or_default()
    }

    /// Total sample size N.
    pub fn total_size(&self) -> usize {
        self.stage_sizes.iter().sum()
    }

    /// Cumulative size N_t after stage `t`.
    pub fn cumulative_size(&self, t: usize) -> usize {
        self.stage_sizes.iter().take(t).sum()
    }

    /// Stage fractions r_ℓ = n_ℓ / N.
    pub fn stage_fractions(&self) -> Vec<f64> {
        let n = self.total_size() as f64;
        self.stage_sizes.iter().map(|&k| k as f64 / n).collect()
    }

    pub fn from_json(text: &str) -> Result<TrialConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates and returns the config, or every violation found.
    pub fn validated(self) -> Result<TrialConfig> {
        let v = validate_config(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(CaraError::InvalidConfig(v))
        }
    }
}

/// Checks every configuration invariant and reports all violations.
pub fn validate_config(cfg: &TrialConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if cfg.horizon < 2 {
        out.push(Violation::new("horizon", format!("T = {} must be at least 2", cfg.horizon)));
    }
    if cfg.stage_sizes.len() != cfg.horizon {
        out.push(Violation::new(
            "stage_sizes",
            format!("{} stage sizes for T = {}", cfg.stage_sizes.len(), cfg.horizon),
        ));
    }
    for (i, &n) in cfg.stage_sizes.iter().enumerate() {
        if n == 0 {
            out.push(Violation::new(format!("stage_sizes[{i}]"), "stage size must be at least 1"));
        }
    }
    if !(cfg.delta > 0.0 && cfg.delta < 0.5) {
        out.push(Violation::new("delta", "delta out of (0, 0.5)"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        out.push(Violation::new("alpha", "alpha out of (0, 1]"));
    }
    if !(cfg.dbcd_gamma >= 0.0) {
        out.push(Violation::new("dbcd_gamma", "gamma must be non-negative"));
    }
    if let Some(c) = cfg.power_constraint_c {
        if !(c > 0.0) {
            out.push(Violation::new("power_constraint_c", "C must be positive"));
        }
    }

    let labels = cfg.labels();
    if labels.is_empty() {
        out.push(Violation::new("strata", "at least one stratum is required"));
    }
    let mut seen = HashSet::new();
    for (i, l) in labels.iter().enumerate() {
        if !seen.insert(l) {
            out.push(Violation::new(format!("strata[{i}]"), format!("duplicate label {l}")));
        }
    }

    if cfg.objective == Objective::FailureReduction && cfg.family() != OutcomeFamily::Bernoulli {
        out.push(Violation::new(
            "objective",
            "failure reduction requires Bernoulli outcomes",
        ));
    }
    if matches!(cfg.method, Method::Neyman | Method::FrRule) && cfg.dgp.is_none() {
        out.push(Violation::new("method", "oracle baselines need a dgp"));
    }

    if let Some(dgp) = &cfg.dgp {
        if !cfg.strata.is_empty() && cfg.strata != dgp.labels() {
            out.push(Violation::new("strata", "labels differ from dgp strata"));
        }
        let total: f64 = dgp.strata.iter().map(|s| s.p).sum();
        if (total - 1.0).abs() > 1e-9 {
            out.push(Violation::new(
                "dgp.strata",
                format!("stratum frequencies sum {} ≠ 1", fmt_sum(total)),
            ));
        }
        for (i, s) in dgp.strata.iter().enumerate() {
            if !(s.p >= 0.0) {
                out.push(Violation::new(format!("dgp.strata[{i}].p"), "frequency must be non-negative"));
            }
            for arm in Arm::BOTH {
                let a = arm.index();
                let pmf = &s.delay_pmf[a];
                if pmf.iter().any(|&q| !(q >= 0.0)) {
                    out.push(Violation::new(
                        format!("dgp.strata[{i}].delay_pmf[{a}]"),
                        "delay probabilities must be non-negative",
                    ));
                }
                let mass: f64 = pmf.iter().sum();
                if mass > 1.0 + 1e-9 {
                    out.push(Violation::new(
                        format!("dgp.strata[{i}].delay_pmf[{a}]"),
                        format!("delay probabilities sum {} > 1", fmt_sum(mass)),
                    ));
                }
                match dgp.outcome_family {
                    OutcomeFamily::Bernoulli => {
                        if !(0.0..=1.0).contains(&s.mu[a]) {
                            out.push(Violation::new(
                                format!("dgp.strata[{i}].mu[{a}]"),
                                "Bernoulli mean must lie in [0, 1]",
                            ));
                        }
                    }
                    OutcomeFamily::Normal => {
                        if !(s.sigma[a] >= 0.0) || !s.mu[a].is_finite() {
                            out.push(Violation::new(
                                format!("dgp.strata[{i}].sigma[{a}]"),
                                "standard deviation must be non-negative and finite",
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

fn fmt_sum(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Where a stage's allocation row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    FixedPilot,
    Optimized,
    Baseline,
}

/// Treatment-1 probabilities e_t(x), one row per stage (rows may cover only
/// the stages executed so far). Arm-0 probabilities are `1 - e`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub rows: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
}

impl AllocationPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Constant plan over `stages` stages.
    pub fn constant(stages: usize, n_strata: usize, e: f64, tag: Provenance) -> Self {
        Self {
            rows: vec![vec![e; n_strata]; stages],
            provenance: vec![tag; stages],
        }
    }

    pub fn push(&mut self, row: Vec<f64>, tag: Provenance) {
        self.rows.push(row);
        self.provenance.push(tag);
    }

    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    /// e_t(1|x) with 1-based `t`.
    pub fn treated(&self, t: usize, x: usize) -> f64 {
        self.rows[t - 1][x]
    }

    pub fn prob(&self, t: usize, x: usize, arm: Arm) -> f64 {
        let e = self.treated(t, x);
        match arm {
            Arm::Treated => e,
            Arm::Control => 1.0 - e,
        }
    }

    /// Rows `1..=t` as a new plan.
    pub fn head(&self, t: usize) -> AllocationPlan {
        AllocationPlan {
            rows: self.rows[..t].to_vec(),
            provenance: self.provenance[..t].to_vec(),
        }
    }

    /// Entries violating the bounds: pilot rows must be exactly 0.5,
    /// everything else within [δ, 1-δ].
    pub fn bound_violations(&self, delta: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            for (x, &e) in row.iter().enumerate() {
                let ok = match self.provenance[i] {
                    Provenance::FixedPilot => e == 0.5,
                    _ => e >= delta - 1e-12 && e <= 1.0 - delta + 1e-12,
                };
                if !ok {
                    out.push((i + 1, x, e));
                }
            }
        }
        out
    }
}

/// Cumulative delay distribution ρ(d | x, a) for d = 0..T-1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayCdf {
    horizon: usize,
    n_strata: usize,
    /// Indexed `[(x * 2 + a) * horizon + d]`.
    values: Vec<f64>,
    /// Largest lag estimated from data (t - 1); `None` for a fully known CDF.
    pub estimable_horizon: Option<usize>,
}

impl DelayCdf {
    pub fn filled(horizon: usize, n_strata: usize, value: f64) -> Self {
        Self {
            horizon,
            n_strata,
            values: vec![value; horizon * n_strata * 2],
            estimable_horizon: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_strata(&self) -> usize {
        self.n_strata
    }

    #[inline]
    fn idx(&self, d: usize, x: usize, arm: Arm) -> usize {
        (x * 2 + arm.index()) * self.horizon + d
    }

    #[inline]
    pub fn get(&self, d: usize, x: usize, arm: Arm) -> f64 {
        self.values[self.idx(d, x, arm)]
    }

    pub fn set(&mut self, d: usize, x: usize, arm: Arm, v: f64) {
        let i = self.idx(d, x, arm);
        self.values[i] = v;
    }

    /// The lag profile ρ(0..T-1 | x, a).
    pub fn profile(&self, x: usize, arm: Arm) -> &[f64] {
        let start = self.idx(0, x, arm);
        &self.values[start..start + self.horizon]
    }

    pub fn is_monotone(&self) -> bool {
        (0..self.n_strata).all(|x| {
            Arm::BOTH.iter().all(|&a| {
                let p = self.profile(x, a);
                p.windows(2).all(|w| w[0] <= w[1] + 1e-15)
                    && p.iter().all(|&v| (0.0..=1.0).contains(&v))
            })
        })
    }

    /// ρ†_t: the CDF as it would be known after stage `t` with every lag
    /// beyond t-1 held at the last estimable level.
    pub fn truncated(&self, t: usize) -> DelayCdf {
        let mut out = self.clone();
        let last = t.saturating_sub(1).min(self.horizon - 1);
        for x in 0..self.n_strata {
            for arm in Arm::BOTH {
                let v = self.get(last, x, arm);
                for d in last + 1..self.horizon {
                    out.set(d, x, arm, v.min(self.get(d, x, arm)));
                }
            }
        }
        out.estimable_horizon = Some(last);
        out
    }
}
