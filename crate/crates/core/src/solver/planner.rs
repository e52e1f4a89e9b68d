//! Forward-looking planners built on the per-stratum programs.

use serde::Serialize;

use crate::error::{CaraError, Flag, Result};
use crate::estimation::InterimSnapshot;
use crate::model::{AllocationPlan, Arm, DgpSpec, Objective, OutcomeFamily, Provenance, TrialConfig};
use crate::objectives::{forward_failures, observation_weights, power_constraint_lhs, SIGMA2_FLOOR};
use crate::solver::baselines::neyman;
use crate::solver::fractional::{solve_fractional, BoundaryTag, FractionalProgram, SolveReport};
use crate::solver::lagrangian::{solve_lagrangian, LinearFractional};

/// Result of one interim planning step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutcome {
    pub t: usize,
    /// ê*_{t+1}(1 | x).
    pub next: Vec<f64>,
    /// Planned rows for stages t+1..T.
    pub planned: Vec<Vec<f64>>,
    pub reports: Vec<SolveReport>,
    /// V̂_t at the planned rows (planner objective for one-step).
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub feasible: bool,
    pub flags: Vec<Flag>,
}

/// The stratum-`x` program at snapshot stage t with past rows locked.
pub fn stratum_program(snapshot: &InterimSnapshot, past: &AllocationPlan, x: usize, delta: f64) -> FractionalProgram {
    let t = snapshot.t;
    let w1 = observation_weights(&snapshot.rho_hat, &snapshot.r_hat, x, Arm::Treated);
    let w0 = observation_weights(&snapshot.rho_hat, &snapshot.r_hat, x, Arm::Control);
    let a0 = (0..t).map(|l| w1[l] * past.rows[l][x]).sum();
    let b0 = (0..t).map(|l| w0[l] * (1.0 - past.rows[l][x])).sum();
    FractionalProgram {
        c1: snapshot.sigma2(x, Arm::Treated).max(SIGMA2_FLOOR),
        c0: snapshot.sigma2(x, Arm::Control).max(SIGMA2_FLOOR),
        a0,
        b0,
        a: w1[t..].to_vec(),
        b: w0[t..].to_vec(),
        low: delta,
        up: 1.0 - delta,
    }
}

fn fallback_report(fp: &FractionalProgram) -> SolveReport {
    let allocation = vec![0.5; fp.len()];
    SolveReport {
        objective: fp.objective(&allocation),
        boundary_pattern: vec![BoundaryTag::Interior; fp.len()],
        allocation,
        pivot_index: None,
        feasible: false,
        degenerate: Vec::new(),
    }
}

fn solve_or_fallback(fp: &FractionalProgram, x: usize, t: usize, flags: &mut Vec<Flag>) -> SolveReport {
    match solve_fractional(fp) {
        Ok(r) => {
            for &j in &r.degenerate {
                flags.push(Flag::DegenerateStage { stratum: x, stage: t + 1 + j });
            }
            r
        }
        Err(e) => {
            flags.push(Flag::SolverFallback {
                stratum: x,
                reason: e.to_string(),
            });
            fallback_report(fp)
        }
    }
}

/// Transposes per-stratum allocations into stage rows.
fn to_rows(per_stratum: &[Vec<f64>], stages: usize) -> Vec<Vec<f64>> {
    (0..stages)
        .map(|j| per_stratum.iter().map(|alloc| alloc[j]).collect())
        .collect()
}

fn weighted_objective(snapshot: &InterimSnapshot, reports: &[SolveReport]) -> f64 {
    snapshot
        .p_hat
        .iter()
        .zip(reports)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, r)| p * r.objective)
        .sum()
}

/// Minimizes V̂_t over stages t+1..T, stratum by stratum.
pub fn solve_power_max(snapshot: &InterimSnapshot, past: &AllocationPlan, delta: f64) -> PlanOutcome {
    let t = snapshot.t;
    assert!(t < snapshot.horizon, "no stages left to plan");
    let mut flags = Vec::new();
    let reports: Vec<SolveReport> = (0..snapshot.n_strata())
        .map(|x| solve_or_fallback(&stratum_program(snapshot, past, x, delta), x, t, &mut flags))
        .collect();
    let per: Vec<Vec<f64>> = reports.iter().map(|r| r.allocation.clone()).collect();
    let planned = to_rows(&per, snapshot.horizon - t);
    PlanOutcome {
        t,
        next: planned[0].clone(),
        objective: weighted_objective(snapshot, &reports),
        planned,
        reports,
        failures: None,
        constraint_c: None,
        lambda: None,
        feasible: true,
        flags,
    }
}

/// One-step planner: only stage t+1 is optimized, with past stages weighted
/// by their visibility one stage ahead.
pub fn solve_one_step(snapshot: &InterimSnapshot, past: &AllocationPlan, delta: f64) -> PlanOutcome {
    let t = snapshot.t;
    assert!(t < snapshot.horizon, "no stages left to plan");
    let r = &snapshot.r_hat;
    let rho = &snapshot.rho_hat;
    let mut flags = Vec::new();
    let reports: Vec<SolveReport> = (0..snapshot.n_strata())
        .map(|x| {
            let fp = FractionalProgram {
                c1: snapshot.sigma2(x, Arm::Treated).max(SIGMA2_FLOOR),
                c0: snapshot.sigma2(x, Arm::Control).max(SIGMA2_FLOOR),
                a0: (0..t).map(|l| r[l] * rho.get(t - l, x, Arm::Treated) * past.rows[l][x]).sum(),
                b0: (0..t)
                    .map(|l| r[l] * rho.get(t - l, x, Arm::Control) * (1.0 - past.rows[l][x]))
                    .sum(),
                a: vec![r[t] * rho.get(0, x, Arm::Treated)],
                b: vec![r[t] * rho.get(0, x, Arm::Control)],
                low: delta,
                up: 1.0 - delta,
            };
            solve_or_fallback(&fp, x, t, &mut flags)
        })
        .collect();
    let next: Vec<f64> = reports.iter().map(|r| r.allocation[0]).collect();
    PlanOutcome {
        t,
        planned: vec![next.clone(); snapshot.horizon - t],
        next,
        objective: weighted_objective(snapshot, &reports),
        reports,
        failures: None,
        constraint_c: None,
        lambda: None,
        feasible: true,
        flags,
    }
}

/// Default C: the constraint value of complete randomization from stage t+1 on.
pub fn default_constraint(snapshot: &InterimSnapshot, past: &AllocationPlan) -> Result<f64> {
    let future = vec![vec![0.5; snapshot.n_strata()]; snapshot.horizon - snapshot.t];
    power_constraint_lhs(snapshot, past, &future)
}

/// Lagrangian allocation for multiplier λ (λ = 0 maximizes successes).
fn lagrangian_allocation(
    snapshot: &InterimSnapshot,
    past: &AllocationPlan,
    delta: f64,
    lambda: f64,
    power: &PlanOutcome,
) -> Result<Vec<Vec<f64>>> {
    let t = snapshot.t;
    let stages = snapshot.horizon - t;
    let mut per = Vec::with_capacity(snapshot.n_strata());
    for x in 0..snapshot.n_strata() {
        // failure slope in e: μ̂(x,0) - μ̂(x,1)
        let k = snapshot.mu(x, Arm::Control) - snapshot.mu(x, Arm::Treated);
        let alloc = if snapshot.p_hat[x] == 0.0 || !power.reports[x].feasible || k == 0.0 {
            power.reports[x].allocation.clone()
        } else if lambda == 0.0 {
            vec![if k < 0.0 { 1.0 - delta } else { delta }; stages]
        } else {
            let lf = LinearFractional {
                fp: stratum_program(snapshot, past, x, delta),
                r: snapshot.r_hat[t..].to_vec(),
                kappa: k / lambda,
            };
            solve_lagrangian(&lf)?
        };
        per.push(alloc);
    }
    Ok(to_rows(&per, stages))
}

/// Minimizes P̂_t subject to V̂_t + heterogeneity ≤ C by bisection on the
/// Lagrange multiplier.
pub fn solve_failure_reduction(
    snapshot: &InterimSnapshot,
    past: &AllocationPlan,
    delta: f64,
    c: Option<f64>,
) -> Result<PlanOutcome> {
    if snapshot.family != OutcomeFamily::Bernoulli {
        return Err(CaraError::OutcomeFamily);
    }
    let c = match c {
        Some(c) => c,
        None => default_constraint(snapshot, past)?,
    };
    let power = solve_power_max(snapshot, past, delta);
    let het = snapshot.heterogeneity();
    let lhs_of = |rows: &[Vec<f64>]| -> f64 {
        power_constraint_lhs(snapshot, past, rows).unwrap_or(f64::INFINITY)
    };

    let finish = |rows: Vec<Vec<f64>>, lambda: Option<f64>, feasible: bool, mut flags: Vec<Flag>| -> Result<PlanOutcome> {
        if !feasible {
            flags.push(Flag::InfeasibleConstraint);
        }
        let reports = (0..snapshot.n_strata())
            .map(|x| {
                let fp = stratum_program(snapshot, past, x, delta);
                let allocation: Vec<f64> = rows.iter().map(|row| row[x]).collect();
                SolveReport {
                    objective: fp.objective(&allocation),
                    boundary_pattern: allocation
                        .iter()
                        .map(|&e| {
                            if e <= fp.low {
                                BoundaryTag::AtLow
                            } else if e >= fp.up {
                                BoundaryTag::AtUp
                            } else {
                                BoundaryTag::Interior
                            }
                        })
                        .collect(),
                    pivot_index: None,
                    feasible,
                    degenerate: power.reports[x].degenerate.clone(),
                    allocation,
                }
            })
            .collect::<Vec<_>>();
        Ok(PlanOutcome {
            t: snapshot.t,
            next: rows[0].clone(),
            objective: lhs_of(&rows) - het,
            failures: Some(forward_failures(snapshot, past, &rows)?),
            planned: rows,
            reports,
            constraint_c: Some(c),
            lambda,
            feasible,
            flags,
        })
    };

    let base_flags = power.flags.clone();
    if power.objective + het > c {
        return finish(power.planned.clone(), None, false, base_flags);
    }
    let free = lagrangian_allocation(snapshot, past, delta, 0.0, &power)?;
    if lhs_of(&free) <= c {
        return finish(free, Some(0.0), true, base_flags);
    }

    let eval = |lambda: f64| -> Result<(Vec<Vec<f64>>, f64)> {
        let rows = lagrangian_allocation(snapshot, past, delta, lambda, &power)?;
        let lhs = lhs_of(&rows);
        Ok((rows, lhs))
    };
    const LAMBDA_MAX: f64 = 1e12;
    const LAMBDA_MIN: f64 = 1e-12;
    let (mut lo, mut hi) = (1.0, 1.0);
    let (mut best_rows, mut best_lhs) = eval(1.0)?;
    if best_lhs > c {
        loop {
            hi *= 2.0;
            if hi > LAMBDA_MAX {
                return finish(power.planned.clone(), Some(f64::INFINITY), true, base_flags);
            }
            let (rows, lhs) = eval(hi)?;
            if lhs <= c {
                best_rows = rows;
                best_lhs = lhs;
                break;
            }
            lo = hi;
        }
    } else {
        loop {
            lo *= 0.5;
            if lo < LAMBDA_MIN {
                return finish(best_rows, Some(hi), true, base_flags);
            }
            let (rows, lhs) = eval(lo)?;
            if lhs > c {
                break;
            }
            hi = lo;
            best_rows = rows;
            best_lhs = lhs;
        }
    }
    // invariant: lhs(lo) > C ≥ lhs(hi)
    for _ in 0..60 {
        if c - best_lhs < 1e-6 * c {
            break;
        }
        let mid = (lo * hi).sqrt();
        let (rows, lhs) = eval(mid)?;
        if lhs <= c {
            hi = mid;
            best_rows = rows;
            best_lhs = lhs;
        } else {
            lo = mid;
        }
    }
    finish(best_rows, Some(hi), true, base_flags)
}

/// Per-stratum comparison between the oracle plan and Neyman allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumOracle {
    pub label: String,
    pub allocation: Vec<f64>,
    pub objective: f64,
    pub neyman: f64,
    pub neyman_objective: f64,
    /// (Neyman - oracle) / Neyman.
    pub improvement: f64,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub objective: Objective,
    pub plan: AllocationPlan,
    /// 𝖵 at the oracle plan.
    pub variance: f64,
    pub neyman_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<f64>,
    pub strata: Vec<StratumOracle>,
}

/// Oracle plan: truth plugged in at t = 0, so stage 1 is optimized too.
pub fn oracle_plan(truth: &DgpSpec, cfg: &TrialConfig) -> Result<OracleReport> {
    let horizon = cfg.horizon;
    let r = cfg.stage_fractions();
    let snapshot = InterimSnapshot::from_truth(truth, &r, 0, truth.delay_cdf(horizon));
    let none = AllocationPlan::new();
    let outcome = match cfg.objective {
        Objective::PowerMax => solve_power_max(&snapshot, &none, cfg.delta),
        Objective::FailureReduction => solve_failure_reduction(&snapshot, &none, cfg.delta, cfg.power_constraint_c)?,
    };
    let mut strata = Vec::new();
    let mut neyman_variance = 0.0;
    for (x, s) in truth.strata.iter().enumerate() {
        let fp = stratum_program(&snapshot, &none, x, cfg.delta);
        let ny = neyman(truth.sd(x, Arm::Treated), truth.sd(x, Arm::Control), cfg.delta);
        let ny_obj = fp.objective(&vec![ny; horizon]);
        neyman_variance += s.p * ny_obj;
        let report = outcome.reports[x].clone();
        strata.push(StratumOracle {
            label: s.label.clone(),
            allocation: report.allocation.clone(),
            objective: report.objective,
            neyman: ny,
            neyman_objective: ny_obj,
            improvement: (ny_obj - report.objective) / ny_obj,
            report,
        });
    }
    let plan = AllocationPlan {
        rows: outcome.planned.clone(),
        provenance: vec![Provenance::Optimized; horizon],
    };
    let variance = crate::objectives::design_variance(&plan, truth, &snapshot.rho_hat, &r)?;
    Ok(OracleReport {
        objective: cfg.objective,
        plan,
        variance,
        neyman_variance,
        failures: outcome.failures,
        strata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{StratumParams, TrialConfig};
    use crate::presets;

    fn equal_r(h: usize) -> Vec<f64> {
        vec![1.0 / h as f64; h]
    }

    fn no_delay(mut dgp: DgpSpec, horizon: usize) -> DgpSpec {
        for s in dgp.strata.iter_mut() {
            let mut pmf = vec![0.0; horizon];
            pmf[0] = 1.0;
            s.delay_pmf = [pmf.clone(), pmf];
        }
        dgp
    }

    #[test]
    fn setup1_oracle_improves_on_neyman() {
        let cfg = presets::setup1_sex(4);
        let rep = oracle_plan(cfg.dgp.as_ref().unwrap(), &cfg).unwrap();
        assert!(rep.variance <= rep.neyman_variance);
        assert!(rep.strata.iter().all(|s| s.improvement >= -1e-12));
    }

    #[test]
    fn no_delay_oracle_equals_neyman() {
        let mut cfg = presets::setup1_sex_who(4);
        cfg.dgp = Some(no_delay(cfg.dgp.unwrap(), 4));
        let rep = oracle_plan(cfg.dgp.as_ref().unwrap(), &cfg).unwrap();
        for s in &rep.strata {
            assert!(s.improvement.abs() < 1e-9, "{}", s.improvement);
            let avg = s.allocation.iter().sum::<f64>() / 4.0;
            assert!((avg - s.neyman).abs() < 1e-9);
        }
    }

    #[test]
    fn no_delay_forward_plan_is_constant_neyman() {
        let cfg = presets::setup1_sex(4);
        let dgp = no_delay(cfg.dgp.clone().unwrap(), 4);
        let snap = InterimSnapshot::from_truth(&dgp, &equal_r(4), 1, dgp.delay_cdf(4));
        let past = AllocationPlan::constant(1, 2, 0.5, Provenance::FixedPilot);
        let out = solve_power_max(&snap, &past, 0.1);
        let flat = crate::objectives::forward_variance(&snap, &past, &vec![vec![0.36 / 2.42, 0.82 / 1.13]; 3]).unwrap();
        assert!(out.objective <= flat + 1e-12);
    }

    #[test]
    fn symmetric_problem_gives_half() {
        let pmf = vec![0.5, 0.2, 0.1, 0.1];
        let dgp = DgpSpec {
            outcome_family: OutcomeFamily::Normal,
            strata: vec![StratumParams {
                label: "A".into(),
                p: 1.0,
                mu: [0.0, 1.0],
                sigma: [1.0, 1.0],
                delay_pmf: [pmf.clone(), pmf],
            }],
            perturb_stratum: None,
        };
        let snap = InterimSnapshot::from_truth(&dgp, &equal_r(4), 1, dgp.delay_cdf(4).truncated(1));
        let past = AllocationPlan::constant(1, 1, 0.5, Provenance::FixedPilot);
        let out = solve_power_max(&snap, &past, 0.1);
        let sym = crate::objectives::forward_variance(&snap, &past, &vec![vec![0.5]; 3]).unwrap();
        assert!((out.objective - sym).abs() < 1e-12);
        let cfg = TrialConfig {
            dgp: Some(dgp.clone()),
            ..presets::setup1_sex(4)
        };
        // every stage ties, so only the objective is pinned down
        let rep = oracle_plan(&dgp, &cfg).unwrap();
        let half = AllocationPlan::constant(4, 1, 0.5, Provenance::Optimized);
        let v_half = crate::objectives::design_variance(&half, &dgp, &dgp.delay_cdf(4), &equal_r(4)).unwrap();
        assert!((rep.variance - v_half).abs() < 1e-10);
    }

    #[test]
    fn failure_reduction_unbounded_c_maximizes_success() {
        let cfg = presets::setup2_sex(4);
        let dgp = cfg.dgp.as_ref().unwrap();
        let snap = InterimSnapshot::from_truth(dgp, &equal_r(4), 1, dgp.delay_cdf(4).truncated(1));
        let past = AllocationPlan::constant(1, 2, 0.5, Provenance::FixedPilot);
        let out = solve_failure_reduction(&snap, &past, 0.1, Some(f64::INFINITY)).unwrap();
        assert!(out.feasible);
        assert!(out.planned.iter().all(|r| r.iter().all(|&e| e == 0.9)));
    }

    #[test]
    fn failure_reduction_at_power_max_level_returns_power_max() {
        let cfg = presets::setup2_sex(4);
        let dgp = cfg.dgp.as_ref().unwrap();
        let snap = InterimSnapshot::from_truth(dgp, &equal_r(4), 1, dgp.delay_cdf(4).truncated(1));
        let past = AllocationPlan::constant(1, 2, 0.5, Provenance::FixedPilot);
        let pm = solve_power_max(&snap, &past, 0.1);
        let c = pm.objective + snap.heterogeneity();
        let out = solve_failure_reduction(&snap, &past, 0.1, Some(c)).unwrap();
        assert!(out.feasible);
        let lhs = power_constraint_lhs(&snap, &past, &out.planned).unwrap();
        assert!(lhs <= c * (1.0 + 1e-6));
        assert!((lhs - c).abs() < 1e-4 * c);
        let infeasible = solve_failure_reduction(&snap, &past, 0.1, Some(0.5 * c)).unwrap();
        assert!(!infeasible.feasible);
        assert!(infeasible.flags.contains(&Flag::InfeasibleConstraint));
    }

    #[test]
    fn failure_reduction_sits_between_floor_and_cr() {
        let cfg = presets::setup2_sex(4);
        let dgp = cfg.dgp.as_ref().unwrap();
        let snap = InterimSnapshot::from_truth(dgp, &equal_r(4), 0, dgp.delay_cdf(4));
        let none = AllocationPlan::new();
        let out = solve_failure_reduction(&snap, &none, 0.1, None).unwrap();
        let c = out.constraint_c.unwrap();
        assert!(power_constraint_lhs(&snap, &none, &out.planned).unwrap() <= c * (1.0 + 1e-6));
        let cr = forward_failures(&snap, &none, &vec![vec![0.5; 2]; 4]).unwrap();
        let floor = forward_failures(&snap, &none, &vec![vec![0.9; 2]; 4]).unwrap();
        let f = out.failures.unwrap();
        assert!(f < cr && f > floor, "{floor} < {f} < {cr}");
    }

    #[test]
    fn failure_reduction_needs_bernoulli() {
        let cfg = presets::setup1_sex(4);
        let dgp = cfg.dgp.as_ref().unwrap();
        let snap = InterimSnapshot::from_truth(dgp, &equal_r(4), 0, dgp.delay_cdf(4));
        assert!(matches!(
            solve_failure_reduction(&snap, &AllocationPlan::new(), 0.1, None),
            Err(CaraError::OutcomeFamily)
        ));
    }

    #[test]
    fn one_step_only_sets_next_stage() {
        let cfg = presets::setup1_sex(4);
        let dgp = cfg.dgp.as_ref().unwrap();
        let snap = InterimSnapshot::from_truth(dgp, &equal_r(4), 2, dgp.delay_cdf(4).truncated(2));
        let past = AllocationPlan::constant(2, 2, 0.5, Provenance::FixedPilot);
        let out = solve_one_step(&snap, &past, 0.1);
        assert_eq!(out.planned.len(), 2);
        assert!(out.next.iter().all(|&e| (0.1..=0.9).contains(&e)));
    }
}
