//! Direct evaluations of reference quantities from the preset primitives,
//! written without the crate's objective or solver code.

use cara_core::model::{Arm, DgpSpec};
use cara_core::objectives::{efficiency_bound, forward_failures};
use cara_core::estimation::InterimSnapshot;
use cara_core::model::{AllocationPlan, Provenance};
use cara_core::presets;

fn cdf(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    pmf.iter()
        .map(|q| {
            acc += q;
            acc
        })
        .collect()
}

/// Bound at a constant allocation e with equal stage fractions.
fn constant_bound(dgp: &DgpSpec, horizon: usize, e: f64) -> f64 {
    let tau = dgp.ate();
    let mut v = 0.0;
    for s in &dgp.strata {
        let rho0 = cdf(&s.delay_pmf[0]);
        let rho1 = cdf(&s.delay_pmf[1]);
        let mut w1 = 0.0;
        let mut w0 = 0.0;
        for t in 1..=horizon {
            w1 += rho1[horizon - t] * e / horizon as f64;
            w0 += rho0[horizon - t] * (1.0 - e) / horizon as f64;
        }
        let het = (s.mu[1] - s.mu[0] - tau).powi(2);
        v += s.p * (s.sigma[1].powi(2) / w1 + s.sigma[0].powi(2) / w0 + het);
    }
    v
}

#[test]
fn complete_randomization_bound_setup1() {
    let cfg = presets::setup1_sex(4);
    let dgp = cfg.dgp.as_ref().unwrap();
    let direct = constant_bound(dgp, 4, 0.5);
    assert!((direct - 7.765028).abs() < 1e-6, "{direct}");
    let plan = AllocationPlan::constant(4, 2, 0.5, Provenance::Baseline);
    let lib = efficiency_bound(&plan, dgp, &dgp.delay_cdf(4), &cfg.stage_fractions()).unwrap();
    assert!((lib - direct).abs() < 1e-12);
}

#[test]
fn complete_randomization_bound_sex_who() {
    let cfg = presets::setup1_sex_who(4);
    let dgp = cfg.dgp.as_ref().unwrap();
    let direct = constant_bound(dgp, 4, 0.5);
    assert!((direct - 41.890474).abs() < 1e-6, "{direct}");
    let plan = AllocationPlan::constant(4, 4, 0.5, Provenance::Baseline);
    let lib = efficiency_bound(&plan, dgp, &dgp.delay_cdf(4), &cfg.stage_fractions()).unwrap();
    assert!((lib - direct).abs() < 1e-10);
}

#[test]
fn complete_randomization_failures_setup2() {
    let cfg = presets::setup2_sex(4);
    let dgp = cfg.dgp.as_ref().unwrap();
    let direct: f64 = dgp.strata.iter().map(|s| s.p * (1.0 - 0.5 * (s.mu[0] + s.mu[1]))).sum();
    assert!((direct - 0.3034).abs() < 1e-12);
    let snap = InterimSnapshot::from_truth(dgp, &cfg.stage_fractions(), 0, dgp.delay_cdf(4));
    let lib = forward_failures(&snap, &AllocationPlan::new(), &vec![vec![0.5; 2]; 4]).unwrap();
    assert!((lib - direct).abs() < 1e-12);
}

#[test]
fn padded_horizons_keep_the_delay_support() {
    let dgp = presets::setup1_sex(6).dgp.unwrap();
    let rho = dgp.delay_cdf(6);
    for x in 0..2 {
        for arm in Arm::BOTH {
            let c = cdf(&dgp.strata[x].delay_pmf[arm.index()]);
            assert_eq!(rho.get(3, x, arm), rho.get(5, x, arm));
            assert!((rho.get(5, x, arm) - c[3]).abs() < 1e-15);
        }
    }
}
