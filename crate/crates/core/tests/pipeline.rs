use cara_core::engine::{run_trial, TrialState};
use cara_core::harness::{power_curve, replicate};
use cara_core::history::{history_to_string, read_history};
use cara_core::model::{Method, Objective, Planner};
use cara_core::presets;

#[test]
fn every_design_respects_the_bounds() {
    for name in presets::PRESET_NAMES {
        for horizon in [4, 5, 6] {
            let base = presets::preset(name, horizon).unwrap();
            for method in Method::comparison_set(base.objective) {
                for planner in [Planner::Forward, Planner::OneStep] {
                    let mut cfg = base.clone();
                    cfg.method = method;
                    cfg.planner = planner;
                    let res = run_trial(&cfg, 17).unwrap();
                    let plan = &res.executed_plan;
                    assert_eq!(plan.stages(), horizon);
                    assert!(plan.bound_violations(cfg.delta).is_empty(), "{name} T={horizon} {method:?}");
                    assert_eq!(res.min_vhat.len(), horizon - 1);
                    assert_eq!(res.history.len(), cfg.total_size());
                }
            }
        }
    }
}

#[test]
fn replaying_a_csv_history_reproduces_the_plan() {
    for cfg in [presets::setup1_sex(5), presets::setup2_sex(4)] {
        let labels = cfg.labels();
        let sim = run_trial(&cfg, 99).unwrap();
        let text = history_to_string(&sim.history, &labels).unwrap();
        let records = read_history(text.as_bytes(), &labels).unwrap();
        let mut live = TrialState::new(cfg.clone()).unwrap();
        for t in 1..=cfg.horizon {
            live.ingest_stage(records.iter().filter(|r| r.stage == t).cloned().collect()).unwrap();
        }
        assert_eq!(live.executed_plan, sim.executed_plan);
        assert_eq!(live.min_vhat, sim.min_vhat);
        assert_eq!(live.conclude(), sim.inference);
    }
}

#[test]
fn single_point_power_curve_matches_replications() {
    let cfg = presets::setup1_sex(4);
    let rows = power_curve(&cfg, &[0.2], &[Method::Proposed], 40, 5).unwrap();
    let mut shifted = cfg.clone();
    shifted.dgp = Some(cfg.dgp.as_ref().unwrap().with_ate(0.2).unwrap());
    let recs = replicate(&shifted, 40, 5, false).unwrap();
    let rejections = recs.iter().filter(|r| r.rejected == Some(true)).count();
    assert_eq!(rows[0].rejections, rejections);
}

#[test]
fn failure_reduction_lowers_failures_against_complete_randomization() {
    let cfg = presets::setup2_sex(4);
    assert_eq!(cfg.objective, Objective::FailureReduction);
    let mean = |m: Method| {
        let mut c = cfg.clone();
        c.method = m;
        let recs = replicate(&c, 300, 1, false).unwrap();
        recs.iter().map(|r| r.failure_rate.unwrap()).sum::<f64>() / recs.len() as f64
    };
    let cr = mean(Method::CompleteRandomization);
    let proposed = mean(Method::Proposed);
    assert!((cr - 0.3034).abs() < 0.01, "{cr}");
    assert!(proposed < cr, "{proposed} vs {cr}");
}
