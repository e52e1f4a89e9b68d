//! Monte Carlo runner and artifact writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::run_trial;
use crate::error::{CaraError, Result};
use crate::estimation::InterimSnapshot;
use crate::model::{AllocationPlan, DgpSpec, Extrapolation, Method, Objective, TrialConfig};
use crate::objectives::{design_variance, efficiency_bound};
use crate::solver::{oracle_plan, solve_power_max, OracleReport};

/// Relative slack allowed when comparing chain links.
const CHAIN_TOL: f64 = 1e-9;

/// Monotone variance chain evaluated with the true DGP and the
/// conservatively truncated true delay CDF ρ†_t.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainAudit {
    /// min over stages t+1..T of the truth-consistent forward variance, t = 1..T-1.
    pub w: Vec<f64>,
    /// 𝖵 at the executed plan with the true delay CDF.
    pub realized: f64,
    /// 𝖵 at the oracle plan.
    pub oracle: f64,
    pub violations: usize,
}

fn dgp_of(cfg: &TrialConfig) -> Result<&DgpSpec> {
    cfg.dgp.as_ref().ok_or_else(|| {
        CaraError::InvalidConfig(vec![crate::error::Violation::new("dgp", "a dgp is required")])
    })
}

/// Oracle 𝖵 for the config's DGP (power objective, stage 1 free).
pub fn oracle_variance(cfg: &TrialConfig) -> Result<f64> {
    let mut c = cfg.clone();
    c.objective = Objective::PowerMax;
    Ok(oracle_plan(dgp_of(cfg)?, &c)?.variance)
}

pub fn chain_audit(cfg: &TrialConfig, executed: &AllocationPlan, oracle: f64) -> Result<ChainAudit> {
    let dgp = dgp_of(cfg)?;
    let horizon = cfg.horizon;
    let r = cfg.stage_fractions();
    let rho = dgp.delay_cdf(horizon);
    let w: Vec<f64> = (1..horizon)
        .map(|t| {
            let snap = InterimSnapshot::from_truth(dgp, &r, t, rho.truncated(t));
            solve_power_max(&snap, &executed.head(t), cfg.delta).objective
        })
        .collect();
    let realized = design_variance(executed, dgp, &rho, &r)?;
    let ge = |a: f64, b: f64| a >= b - CHAIN_TOL * b.abs().max(1.0);
    let mut violations = w.windows(2).filter(|p| !ge(p[0], p[1])).count();
    if let Some(&last) = w.last() {
        violations += !ge(last, realized) as usize;
    }
    violations += !ge(realized, oracle) as usize;
    Ok(ChainAudit {
        w,
        realized,
        oracle,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub extrapolation: Extrapolation,
    pub tau_hat: f64,
    pub v_hat: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub covered: Option<bool>,
    pub rejected: Option<bool>,
    /// Efficiency bound at the executed plan.
    pub realized_bound: f64,
    pub failure_rate: Option<f64>,
    pub min_vhat: Vec<f64>,
    pub chain: Option<ChainAudit>,
    pub flag_count: usize,
}

/// Runs `reps` replications with seeds `base_seed + rep`; output is sorted by rep.
pub fn replicate(cfg: &TrialConfig, reps: usize, base_seed: u64, audit_chain: bool) -> Result<Vec<ReplicationRecord>> {
    let cfg = cfg.clone().validated()?;
    let dgp = dgp_of(&cfg)?.clone();
    let truth = dgp.ate();
    let r = cfg.stage_fractions();
    let rho = dgp.delay_cdf(cfg.horizon);
    let oracle = if audit_chain { Some(oracle_variance(&cfg)?) } else { None };
    let mut out: Vec<ReplicationRecord> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<ReplicationRecord> {
            let seed = base_seed.wrapping_add(rep as u64);
            let res = run_trial(&cfg, seed)?;
            let chain = match oracle {
                Some(o) => Some(chain_audit(&cfg, &res.executed_plan, o)?),
                None => None,
            };
            Ok(ReplicationRecord {
                rep,
                seed,
                method: cfg.method,
                extrapolation: cfg.extrapolation,
                tau_hat: res.inference.tau_hat,
                v_hat: res.inference.v_hat,
                ci: res.inference.ci,
                covered: res.inference.covers(truth),
                rejected: res.inference.rejects_zero(),
                realized_bound: efficiency_bound(&res.executed_plan, &dgp, &rho, &r)?,
                failure_rate: res.failure_rate,
                min_vhat: res.min_vhat,
                chain,
                flag_count: res.flags.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|r| r.rep);
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub extrapolation: Extrapolation,
    pub reps: usize,
    pub true_ate: f64,
    pub mean_tau_hat: f64,
    pub sd_tau_hat: f64,
    /// Covered / evaluated, where evaluated excludes suppressed intervals.
    pub coverage: f64,
    pub covered: usize,
    pub evaluated: usize,
    pub null_ci: usize,
    pub rejection_rate: f64,
    pub mean_realized_bound: f64,
    pub mean_min_vhat: Vec<f64>,
    pub mean_failure_rate: Option<f64>,
    pub sd_failure_rate: Option<f64>,
    pub chain_audited: usize,
    pub chain_violations: usize,
}

pub fn summarize(records: &[ReplicationRecord], true_ate: f64) -> MethodSummary {
    assert!(!records.is_empty(), "nothing to summarize");
    let taus: Vec<f64> = records.iter().map(|r| r.tau_hat).collect();
    let evaluated: Vec<bool> = records.iter().filter_map(|r| r.covered).collect();
    let covered = evaluated.iter().filter(|&&c| c).count();
    let rejections: Vec<bool> = records.iter().filter_map(|r| r.rejected).collect();
    let fails: Vec<f64> = records.iter().filter_map(|r| r.failure_rate).collect();
    let stages = records[0].min_vhat.len();
    let mean_min_vhat = (0..stages)
        .map(|s| mean(&records.iter().map(|r| r.min_vhat[s]).collect::<Vec<_>>()))
        .collect();
    let audits: Vec<&ChainAudit> = records.iter().filter_map(|r| r.chain.as_ref()).collect();
    MethodSummary {
        method: records[0].method,
        extrapolation: records[0].extrapolation,
        reps: records.len(),
        true_ate,
        mean_tau_hat: mean(&taus),
        sd_tau_hat: sd(&taus),
        coverage: covered as f64 / evaluated.len().max(1) as f64,
        covered,
        evaluated: evaluated.len(),
        null_ci: records.len() - evaluated.len(),
        rejection_rate: rejections.iter().filter(|&&r| r).count() as f64 / rejections.len().max(1) as f64,
        mean_realized_bound: mean(&records.iter().map(|r| r.realized_bound).collect::<Vec<_>>()),
        mean_min_vhat,
        mean_failure_rate: (!fails.is_empty()).then(|| mean(&fails)),
        sd_failure_rate: (fails.len() > 1).then(|| sd(&fails)),
        chain_audited: audits.len(),
        chain_violations: audits.iter().map(|a| a.violations).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub horizon: usize,
    pub objective: Objective,
    pub reps: usize,
    pub base_seed: u64,
    pub true_ate: f64,
    pub oracle_variance: f64,
    pub methods: Vec<MethodSummary>,
}

pub struct Simulation {
    pub summary: SimulationSummary,
    pub records: Vec<ReplicationRecord>,
}

/// Runs every (method, extrapolation) pair. The variance chain is audited for
/// the proposed power-maximizing design under conservative extrapolation.
pub fn simulate(
    cfg: &TrialConfig,
    methods: &[Method],
    extrapolations: &[Extrapolation],
    reps: usize,
    base_seed: u64,
) -> Result<Simulation> {
    let dgp = dgp_of(cfg)?;
    let true_ate = dgp.ate();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &method in methods {
        for &extrapolation in extrapolations {
            let mut c = cfg.clone();
            c.method = method;
            c.extrapolation = extrapolation;
            let audit = extrapolation == Extrapolation::Conservative
                && matches!(method, Method::Proposed | Method::ProposedDbcd)
                && c.objective == Objective::PowerMax;
            let recs = replicate(&c, reps, base_seed, audit)?;
            summaries.push(summarize(&recs, true_ate));
            records.extend(recs);
        }
    }
    Ok(Simulation {
        summary: SimulationSummary {
            horizon: cfg.horizon,
            objective: cfg.objective,
            reps,
            base_seed,
            true_ate,
            oracle_variance: oracle_variance(cfg)?,
            methods: summaries,
        },
        records,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| (b as u8).to_string()).unwrap_or_default()
}

pub const VARIANCE_HEADER: [&str; 6] = [
    "method",
    "extrapolation",
    "stage",
    "mean_min_vhat",
    "mean_realized_bound",
    "oracle_variance",
];
pub const FAILURE_HEADER: [&str; 5] = ["method", "extrapolation", "reps", "mean_failure_rate", "sd_failure_rate"];
pub const COVERAGE_HEADER: [&str; 10] = [
    "method",
    "extrapolation",
    "reps",
    "coverage",
    "covered",
    "evaluated",
    "null_ci",
    "rejection_rate",
    "mean_tau_hat",
    "true_ate",
];
pub const REPLICATION_HEADER: [&str; 14] = [
    "method",
    "extrapolation",
    "rep",
    "seed",
    "tau_hat",
    "v_hat",
    "ci_lo",
    "ci_hi",
    "covered",
    "rejected",
    "realized_bound",
    "failure_rate",
    "chain_violations",
    "flags",
];

/// Writes variance.csv, failure.csv, coverage.csv, replications.csv and summary.json.
pub fn write_artifacts(sim: &Simulation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let s = &sim.summary;

    let mut w = csv::Writer::from_path(dir.join("variance.csv"))?;
    w.write_record(VARIANCE_HEADER)?;
    for m in &s.methods {
        for (i, v) in m.mean_min_vhat.iter().enumerate() {
            w.write_record([
                m.method.name().to_string(),
                m.extrapolation.name().to_string(),
                (i + 1).to_string(),
                v.to_string(),
                m.mean_realized_bound.to_string(),
                s.oracle_variance.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("failure.csv"))?;
    w.write_record(FAILURE_HEADER)?;
    for m in s.methods.iter().filter(|m| m.mean_failure_rate.is_some()) {
        w.write_record([
            m.method.name().to_string(),
            m.extrapolation.name().to_string(),
            m.reps.to_string(),
            opt(m.mean_failure_rate),
            opt(m.sd_failure_rate),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("coverage.csv"))?;
    w.write_record(COVERAGE_HEADER)?;
    for m in &s.methods {
        w.write_record([
            m.method.name().to_string(),
            m.extrapolation.name().to_string(),
            m.reps.to_string(),
            m.coverage.to_string(),
            m.covered.to_string(),
            m.evaluated.to_string(),
            m.null_ci.to_string(),
            m.rejection_rate.to_string(),
            m.mean_tau_hat.to_string(),
            m.true_ate.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("replications.csv"))?;
    w.write_record(REPLICATION_HEADER)?;
    for r in &sim.records {
        w.write_record([
            r.method.name().to_string(),
            r.extrapolation.name().to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            r.tau_hat.to_string(),
            opt(r.v_hat),
            opt(r.ci.map(|c| c.0)),
            opt(r.ci.map(|c| c.1)),
            opt_bool(r.covered),
            opt_bool(r.rejected),
            r.realized_bound.to_string(),
            opt(r.failure_rate),
            r.chain.as_ref().map(|c| c.violations.to_string()).unwrap_or_default(),
            r.flag_count.to_string(),
        ])?;
    }
    w.flush()?;

    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(s)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub ate: f64,
    pub method: Method,
    pub reps: usize,
    pub rejections: usize,
    pub evaluated: usize,
    pub rejection_rate: f64,
}

pub const POWER_HEADER: [&str; 6] = ["ate", "method", "reps", "rejections", "evaluated", "rejection_rate"];

/// Evenly spaced grid from `min` to `max` with `steps` points.
pub fn grid(min: f64, max: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..steps)
            .map(|i| min + (max - min) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Rejection rates of H0: τ = 0 across a grid of true effects.
pub fn power_curve(
    cfg: &TrialConfig,
    ates: &[f64],
    methods: &[Method],
    reps: usize,
    base_seed: u64,
) -> Result<Vec<PowerRow>> {
    let dgp = dgp_of(cfg)?;
    let mut rows = Vec::new();
    for &ate in ates {
        let shifted = dgp.with_ate(ate)?;
        for &method in methods {
            let mut c = cfg.clone();
            c.dgp = Some(shifted.clone());
            c.method = method;
            let recs = replicate(&c, reps, base_seed, false)?;
            let decided: Vec<bool> = recs.iter().filter_map(|r| r.rejected).collect();
            let rejections = decided.iter().filter(|&&r| r).count();
            rows.push(PowerRow {
                ate,
                method,
                reps,
                rejections,
                evaluated: decided.len(),
                rejection_rate: rejections as f64 / decided.len().max(1) as f64,
            });
        }
    }
    Ok(rows)
}

pub fn write_power_curve(rows: &[PowerRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(POWER_HEADER)?;
    for r in rows {
        w.write_record([
            r.ate.to_string(),
            r.method.name().to_string(),
            r.reps.to_string(),
            r.rejections.to_string(),
            r.evaluated.to_string(),
            r.rejection_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const ORACLE_HEADER: [&str; 4] = ["stratum", "stage", "oracle", "neyman"];

/// Stage-by-stratum allocations of the oracle and Neyman plans.
pub fn oracle_csv(report: &OracleReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ORACLE_HEADER)?;
    for s in &report.strata {
        for (t, e) in s.allocation.iter().enumerate() {
            w.write_record([s.label.clone(), (t + 1).to_string(), e.to_string(), s.neyman.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CaraError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Per-method grouping used by reports: method name → summaries.
pub fn by_method(summary: &SimulationSummary) -> BTreeMap<&'static str, Vec<&MethodSummary>> {
    let mut out: BTreeMap<&'static str, Vec<&MethodSummary>> = BTreeMap::new();
    for m in &summary.methods {
        out.entry(m.method.name()).or_default().push(m);
    }
    out
}
