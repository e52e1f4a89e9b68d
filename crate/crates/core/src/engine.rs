//! Protocol state machine: enroll, assign, reveal, analyse, plan.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::Serialize;

use crate::error::{CaraError, Flag, Result};
use crate::estimation::{build_snapshot, InterimSnapshot};
use crate::inference::{infer, InferenceReport};
use crate::model::{
    AllocationPlan, Arm, Delay, DgpSpec, Method, Objective, OutcomeFamily, ParticipantRecord, Planner,
    Provenance, TrialConfig,
};
use crate::solver::{dbcd_smooth, neyman, rosenberger, solve_failure_reduction, solve_one_step, solve_power_max, PlanOutcome};

#[derive(Debug, Clone)]
pub struct TrialState {
    pub cfg: TrialConfig,
    pub current_stage: usize,
    pub history: Vec<ParticipantRecord>,
    pub executed_plan: AllocationPlan,
    /// Snapshot after each concluded stage.
    pub snapshots: Vec<InterimSnapshot>,
    /// Planning output after stages 1..T-1.
    pub plans: Vec<PlanOutcome>,
    /// min V̂_t after stages 1..T-1.
    pub min_vhat: Vec<f64>,
    pub next_target: Vec<f64>,
    next_provenance: Provenance,
    pub flags: Vec<Flag>,
    rng: Option<ChaCha8Rng>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub executed_plan: AllocationPlan,
    pub min_vhat: Vec<f64>,
    pub inference: InferenceReport,
    /// Share of all N outcomes equal to 0 (Bernoulli only).
    pub failure_rate: Option<f64>,
    pub flags: Vec<Flag>,
    #[serde(skip)]
    pub history: Vec<ParticipantRecord>,
}

/// Per-stratum samplers prepared once per trial.
struct Sampler {
    strata: WeightedIndex<f64>,
    /// CDF of the delay pmf per (x, a); draws past the end are censored.
    delay_cdf: Vec<[Vec<f64>; 2]>,
    normals: Vec<[Option<Normal<f64>>; 2]>,
}

impl Sampler {
    fn new(dgp: &DgpSpec) -> Result<Self> {
        let strata = WeightedIndex::new(dgp.frequencies()).map_err(|e| {
            CaraError::InvalidConfig(vec![crate::error::Violation::new("dgp.strata", e.to_string())])
        })?;
        let delay_cdf = dgp
            .strata
            .iter()
            .map(|s| {
                let cum = |pmf: &Vec<f64>| {
                    pmf.iter()
                        .scan(0.0, |acc, &q| {
                            *acc += q;
                            Some(*acc)
                        })
                        .collect::<Vec<f64>>()
                };
                [cum(&s.delay_pmf[0]), cum(&s.delay_pmf[1])]
            })
            .collect();
        let normals = (0..dgp.n_strata())
            .map(|x| {
                Arm::BOTH.map(|a| match dgp.outcome_family {
                    OutcomeFamily::Normal => Normal::new(dgp.mean(x, a), dgp.sd(x, a)).ok(),
                    OutcomeFamily::Bernoulli => None,
                })
            })
            .collect();
        Ok(Self {
            strata,
            delay_cdf,
            normals,
        })
    }

    fn delay(&self, x: usize, arm: Arm, rng: &mut impl Rng) -> Delay {
        let u: f64 = rng.random();
        match self.delay_cdf[x][arm.index()].iter().position(|&c| u < c) {
            Some(d) => Delay::Lag(d as u32),
            None => Delay::Censored,
        }
    }

    fn outcome(&self, dgp: &DgpSpec, x: usize, arm: Arm, rng: &mut impl Rng) -> f64 {
        match &self.normals[x][arm.index()] {
            Some(n) => n.sample(rng),
            None => {
                let u: f64 = rng.random();
                if u < dgp.mean(x, arm) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl TrialState {
    /// Real-trial mode: stages are supplied through [`TrialState::ingest_stage`].
    pub fn new(cfg: TrialConfig) -> Result<Self> {
        let cfg = cfg.validated()?;
        let k = cfg.n_strata();
        Ok(Self {
            cfg,
            current_stage: 0,
            history: Vec::new(),
            executed_plan: AllocationPlan::new(),
            snapshots: Vec::new(),
            plans: Vec::new(),
            min_vhat: Vec::new(),
            next_target: vec![0.5; k],
            next_provenance: Provenance::FixedPilot,
            flags: Vec::new(),
            rng: None,
        })
    }

    /// Simulation mode seeded with `seed`.
    pub fn simulated(cfg: TrialConfig, seed: u64) -> Result<Self> {
        if cfg.dgp.is_none() {
            return Err(CaraError::InvalidConfig(vec![crate::error::Violation::new(
                "dgp",
                "simulation needs a dgp",
            )]));
        }
        let mut s = Self::new(cfg)?;
        s.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        Ok(s)
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn is_complete(&self) -> bool {
        self.current_stage == self.cfg.horizon
    }

    /// Simulates the next stage and runs its interim analysis.
    pub fn advance_stage(&mut self) -> Result<()> {
        if self.is_complete() {
            return Err(CaraError::TrialComplete(self.current_stage));
        }
        let dgp = self.cfg.dgp.clone().expect("simulated state has a dgp");
        let sampler = Sampler::new(&dgp)?;
        let mut rng = self.rng.take().expect("advance_stage needs simulation mode");
        let stage = self.current_stage + 1;
        let n = self.cfg.stage_sizes[stage - 1];
        let k = self.cfg.n_strata();
        let smooth = self.cfg.method == Method::ProposedDbcd && stage >= 2;
        let mut assigned = vec![0usize; k];
        let mut treated = vec![0usize; k];
        let mut records = Vec::with_capacity(n);
        let first_id = self.history.len() as u64 + 1;
        for i in 0..n {
            let x = sampler.strata.sample(&mut rng);
            let target = self.next_target[x];
            let prob = if smooth {
                let f = if assigned[x] == 0 {
                    target
                } else {
                    treated[x] as f64 / assigned[x] as f64
                };
                dbcd_smooth(target, f, assigned[x], self.cfg.dbcd_gamma, self.cfg.delta)
            } else {
                target
            };
            let arm = if rng.random::<f64>() < prob { Arm::Treated } else { Arm::Control };
            assigned[x] += 1;
            treated[x] += (arm == Arm::Treated) as usize;
            let delay = sampler.delay(x, arm, &mut rng);
            let outcome = sampler.outcome(&dgp, x, arm, &mut rng);
            records.push(ParticipantRecord {
                id: first_id + i as u64,
                stage,
                stratum: x,
                arm,
                delay,
                outcome,
            });
        }
        self.rng = Some(rng);
        self.conclude_stage(records)
    }

    /// Accepts operator-supplied records for the next stage.
    pub fn ingest_stage(&mut self, records: Vec<ParticipantRecord>) -> Result<()> {
        if self.is_complete() {
            return Err(CaraError::TrialComplete(self.current_stage));
        }
        let expected = self.current_stage + 1;
        if let Some(bad) = records.iter().find(|r| r.stage != expected) {
            return Err(CaraError::StageMismatch {
                expected,
                found: bad.stage,
            });
        }
        let k = self.cfg.n_strata();
        if let Some((row, _)) = records.iter().enumerate().find(|(_, r)| r.stratum >= k) {
            return Err(CaraError::Schema {
                row: row + 1,
                message: "stratum index out of range".into(),
            });
        }
        self.conclude_stage(records)
    }

    fn conclude_stage(&mut self, records: Vec<ParticipantRecord>) -> Result<()> {
        self.history.extend(records);
        self.executed_plan.push(self.next_target.clone(), self.next_provenance);
        self.current_stage += 1;
        let t = self.current_stage;
        let snapshot = build_snapshot(&self.history, t, &self.cfg);
        self.flags.extend(snapshot.flags.iter().cloned());
        if t < self.cfg.horizon {
            self.plan_next(&snapshot)?;
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    fn plan_next(&mut self, snapshot: &InterimSnapshot) -> Result<()> {
        let cfg = &self.cfg;
        let delta = cfg.delta;
        let past = &self.executed_plan;
        let power = solve_power_max(snapshot, past, delta);
        self.min_vhat.push(power.objective);
        let outcome = match cfg.method {
            Method::Proposed | Method::ProposedDbcd => match (cfg.objective, cfg.planner) {
                (Objective::PowerMax, Planner::Forward) => power,
                (Objective::PowerMax, Planner::OneStep) => solve_one_step(snapshot, past, delta),
                (Objective::FailureReduction, _) => {
                    solve_failure_reduction(snapshot, past, delta, cfg.power_constraint_c)?
                }
            },
            _ => {
                let dgp = cfg.dgp.as_ref();
                let row: Vec<f64> = (0..cfg.n_strata())
                    .map(|x| match cfg.method {
                        Method::Neyman => {
                            let d = dgp.expect("validated");
                            neyman(d.sd(x, Arm::Treated), d.sd(x, Arm::Control), delta)
                        }
                        Method::FrRule => {
                            let d = dgp.expect("validated");
                            rosenberger(d.mean(x, Arm::Treated), d.mean(x, Arm::Control), delta)
                        }
                        _ => 0.5,
                    })
                    .collect();
                self.next_target = row.clone();
                self.next_provenance = Provenance::Baseline;
                let mut out = power;
                out.planned = vec![row.clone(); cfg.horizon - snapshot.t];
                out.next = row;
                self.plans.push(out);
                return Ok(());
            }
        };
        self.flags.extend(outcome.flags.iter().cloned());
        self.next_target = outcome.next.clone();
        self.next_provenance = Provenance::Optimized;
        self.plans.push(outcome);
        Ok(())
    }

    /// End-of-trial inference on the full history.
    pub fn conclude(&self) -> InferenceReport {
        infer(&self.history, self.cfg.horizon, self.cfg.n_strata(), self.cfg.alpha)
    }

    pub fn into_result(self) -> TrialResult {
        let inference = self.conclude();
        let failure_rate = (self.cfg.family() == OutcomeFamily::Bernoulli && !self.history.is_empty()).then(|| {
            self.history.iter().filter(|r| r.outcome == 0.0).count() as f64 / self.history.len() as f64
        });
        let mut flags = self.flags;
        flags.extend(inference.warnings.iter().cloned());
        TrialResult {
            executed_plan: self.executed_plan,
            min_vhat: self.min_vhat,
            inference,
            failure_rate,
            flags,
            history: self.history,
        }
    }
}

/// Simulates all T stages with the given seed and runs inference.
pub fn run_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialResult> {
    let mut state = TrialState::simulated(cfg.clone(), seed)?;
    while !state.is_complete() {
        state.advance_stage()?;
    }
    Ok(state.into_result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{history_to_string, read_history};
    use crate::presets;

    #[test]
    fn final_history_has_n_records() {
        let cfg = presets::setup1_sex(4);
        let res = run_trial(&cfg, 3).unwrap();
        assert_eq!(res.history.len(), 400);
        assert_eq!(res.executed_plan.stages(), 4);
        assert_eq!(res.executed_plan.rows[0], vec![0.5, 0.5]);
        assert!(res.executed_plan.bound_violations(0.1).is_empty());
        assert_eq!(res.min_vhat.len(), 3);
    }

    #[test]
    fn seed_determines_history() {
        let cfg = presets::setup2_sex(4);
        let a = run_trial(&cfg, 7).unwrap();
        let b = run_trial(&cfg, 7).unwrap();
        let labels = cfg.labels();
        assert_eq!(
            history_to_string(&a.history, &labels).unwrap(),
            history_to_string(&b.history, &labels).unwrap()
        );
        let c = run_trial(&cfg, 8).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn immediate_delays_are_visible_at_their_stage() {
        let mut cfg = presets::setup1_sex(4);
        for s in cfg.dgp.as_mut().unwrap().strata.iter_mut() {
            s.delay_pmf = [vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]];
        }
        let res = run_trial(&cfg, 1).unwrap();
        assert!(res.history.iter().all(|r| r.visible_at(r.stage)));
    }

    #[test]
    fn complete_randomization_executes_half() {
        let mut cfg = presets::setup1_sex(4);
        cfg.method = Method::CompleteRandomization;
        let res = run_trial(&cfg, 2).unwrap();
        assert!(res.executed_plan.rows.iter().all(|r| r.iter().all(|&e| e == 0.5)));
    }

    #[test]
    fn failure_reduction_on_normal_outcomes_rejected() {
        let mut cfg = presets::setup1_sex(4);
        cfg.objective = Objective::FailureReduction;
        assert!(matches!(TrialState::new(cfg), Err(CaraError::InvalidConfig(_))));
    }

    #[test]
    fn interval_has_the_normal_form() {
        let cfg = presets::setup1_sex(4);
        let res = run_trial(&cfg, 5).unwrap();
        let inf = &res.inference;
        let (lo, hi) = inf.ci.unwrap();
        let half = 1.959963984540054 * (inf.v_hat.unwrap() / 400.0).sqrt();
        assert!((lo - (inf.tau_hat - half)).abs() < 1e-12 && (hi - (inf.tau_hat + half)).abs() < 1e-12);
    }

    #[test]
    fn ingest_replays_a_simulated_trial() {
        let cfg = presets::setup2_sex(4);
        let sim = run_trial(&cfg, 11).unwrap();
        let labels = cfg.labels();
        let text = history_to_string(&sim.history, &labels).unwrap();
        let recs = read_history(text.as_bytes(), &labels).unwrap();
        let mut state = TrialState::new(cfg.clone()).unwrap();
        for stage in 1..=4 {
            let batch: Vec<_> = recs.iter().filter(|r| r.stage == stage).cloned().collect();
            state.ingest_stage(batch).unwrap();
        }
        assert_eq!(state.executed_plan, sim.executed_plan);
    }

    #[test]
    fn ingest_rejects_wrong_stage() {
        let cfg = presets::setup1_sex(4);
        let sim = run_trial(&cfg, 1).unwrap();
        let mut state = TrialState::new(cfg).unwrap();
        let stage1: Vec<_> = sim.history.iter().filter(|r| r.stage == 1).cloned().collect();
        state.ingest_stage(stage1.clone()).unwrap();
        assert!(matches!(
            state.ingest_stage(stage1),
            Err(CaraError::StageMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn dbcd_mode_runs_within_bounds() {
        let mut cfg = presets::setup1_sex(4);
        cfg.method = Method::ProposedDbcd;
        let res = run_trial(&cfg, 4).unwrap();
        assert!(res.executed_plan.bound_violations(0.1).is_empty());
    }
}
