//! Objective and constraint functionals of an allocation plan.
//!
//! Sums run stratum-major, stage-minor so results are reproducible bit for bit.

use crate::error::{CaraError, Result};
use crate::estimation::InterimSnapshot;
use crate::model::{AllocationPlan, Arm, DelayCdf, DgpSpec, OutcomeFamily};

/// Variance floor applied inside objective numerators.
pub const SIGMA2_FLOOR: f64 = 1e-8;

/// Observation weights r_ℓ ρ(T-ℓ | x, a) for ℓ = 1..T.
pub fn observation_weights(rho: &DelayCdf, r: &[f64], x: usize, arm: Arm) -> Vec<f64> {
    let horizon = r.len();
    (0..horizon)
        .map(|i| r[i] * rho.get(horizon - 1 - i, x, arm))
        .collect()
}

/// Aggregate observation probability Σ_ℓ w_ℓ e_ℓ(a | x) over plan rows.
fn observed_mass(w: &[f64], rows: &[Vec<f64>], x: usize, arm: Arm) -> f64 {
    w.iter()
        .zip(rows)
        .map(|(wl, row)| {
            let e = row[x];
            wl * match arm {
                Arm::Treated => e,
                Arm::Control => 1.0 - e,
            }
        })
        .sum()
}

/// c1 / α + c0 / β for one stratum under a complete plan.
fn stratum_term(
    sigma2: [f64; 2],
    rho: &DelayCdf,
    r: &[f64],
    rows: &[Vec<f64>],
    x: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for arm in [Arm::Treated, Arm::Control] {
        let w = observation_weights(rho, r, x, arm);
        let denom = observed_mass(&w, rows, x, arm);
        if !(denom > 0.0) {
            return Err(CaraError::ZeroDenominator { stratum: x, arm });
        }
        total += sigma2[arm.index()] / denom;
    }
    Ok(total)
}

fn plan_variance(
    p: &[f64],
    sigma2: &[[f64; 2]],
    rho: &DelayCdf,
    r: &[f64],
    rows: &[Vec<f64>],
) -> Result<f64> {
    assert_eq!(rows.len(), r.len(), "plan must cover every stage");
    let mut v = 0.0;
    for x in 0..p.len() {
        if p[x] == 0.0 {
            continue;
        }
        v += p[x] * stratum_term(sigma2[x], rho, r, rows, x)?;
    }
    Ok(v)
}

fn truth_sigma2(truth: &DgpSpec) -> Vec<[f64; 2]> {
    (0..truth.n_strata())
        .map(|x| [truth.variance(x, Arm::Control), truth.variance(x, Arm::Treated)])
        .collect()
}

/// The variance functional 𝖵(e_1, ..., e_T) under the true DGP, without the
/// effect-heterogeneity term.
pub fn design_variance(plan: &AllocationPlan, truth: &DgpSpec, delays: &DelayCdf, r: &[f64]) -> Result<f64> {
    plan_variance(&truth.frequencies(), &truth_sigma2(truth), delays, r, &plan.rows)
}

/// Σ p(x) (τ(x) - τ)² under the true DGP.
pub fn heterogeneity(truth: &DgpSpec) -> f64 {
    let tau = truth.ate();
    truth
        .strata
        .iter()
        .enumerate()
        .map(|(x, s)| s.p * (truth.tau_x(x) - tau).powi(2))
        .sum()
}

/// Semiparametric efficiency bound V of the plan.
pub fn efficiency_bound(plan: &AllocationPlan, truth: &DgpSpec, delays: &DelayCdf, r: &[f64]) -> Result<f64> {
    Ok(design_variance(plan, truth, delays, r)? + heterogeneity(truth))
}

/// Per-stratum 𝖵 contribution (unweighted by p(x)) under the true DGP.
pub fn stratum_design_variance(
    plan: &AllocationPlan,
    truth: &DgpSpec,
    delays: &DelayCdf,
    r: &[f64],
    x: usize,
) -> Result<f64> {
    let s2 = [truth.variance(x, Arm::Control), truth.variance(x, Arm::Treated)];
    stratum_term(s2, delays, r, &plan.rows, x)
}

fn joined_rows(snapshot: &InterimSnapshot, past: &AllocationPlan, future: &[Vec<f64>]) -> Vec<Vec<f64>> {
    assert_eq!(past.stages(), snapshot.t, "past plan must cover stages 1..t");
    assert_eq!(
        past.stages() + future.len(),
        snapshot.horizon,
        "future must cover stages t+1..T"
    );
    past.rows.iter().chain(future).cloned().collect()
}

fn floored_sigma2(snapshot: &InterimSnapshot) -> Vec<[f64; 2]> {
    snapshot
        .sigma2_hat
        .iter()
        .map(|s| [s[0].max(SIGMA2_FLOOR), s[1].max(SIGMA2_FLOOR)])
        .collect()
}

/// V̂_t: plug-in 𝖵 with executed rows for stages ≤ t and candidate rows after.
pub fn forward_variance(snapshot: &InterimSnapshot, past: &AllocationPlan, future: &[Vec<f64>]) -> Result<f64> {
    let rows = joined_rows(snapshot, past, future);
    plan_variance(
        &snapshot.p_hat,
        &floored_sigma2(snapshot),
        &snapshot.rho_hat,
        &snapshot.r_hat,
        &rows,
    )
}

/// P̂_t: forward-looking expected failure proportion.
pub fn forward_failures(snapshot: &InterimSnapshot, past: &AllocationPlan, future: &[Vec<f64>]) -> Result<f64> {
    if snapshot.family != OutcomeFamily::Bernoulli {
        return Err(CaraError::OutcomeFamily);
    }
    let rows = joined_rows(snapshot, past, future);
    let mut total = 0.0;
    for (l, row) in rows.iter().enumerate() {
        let mut stage = 0.0;
        for (x, &e) in row.iter().enumerate() {
            let [m0, m1] = snapshot.mu_hat[x];
            stage += snapshot.p_hat[x] * (e * (1.0 - m1) + (1.0 - e) * (1.0 - m0));
        }
        total += snapshot.r_hat[l] * stage;
    }
    Ok(total)
}

/// V̂_t plus the plug-in heterogeneity term, compared against C.
pub fn power_constraint_lhs(snapshot: &InterimSnapshot, past: &AllocationPlan, future: &[Vec<f64>]) -> Result<f64> {
    Ok(forward_variance(snapshot, past, future)? + snapshot.heterogeneity())
}
