//! Interim estimators computed from outcomes visible at an analysis stage.

use serde::Serialize;

use crate::error::Flag;
use crate::model::{
    visible_at, Arm, DelayCdf, DgpSpec, Extrapolation, OutcomeFamily, ParticipantRecord,
    TrialConfig,
};

/// Everything known after the interim analysis of stage `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterimSnapshot {
    pub t: usize,
    pub horizon: usize,
    pub family: OutcomeFamily,
    pub p_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
    /// `[control, treated]` per stratum.
    pub mu_hat: Vec<[f64; 2]>,
    pub sigma2_hat: Vec<[f64; 2]>,
    /// Extrapolated to lag T-1.
    pub rho_hat: DelayCdf,
    pub tau_hat_x: Vec<f64>,
    pub tau_hat: f64,
    /// Visible outcomes per (x, a).
    pub cell_counts: Vec<[usize; 2]>,
    /// Enrollees per stratum up to stage t.
    pub stratum_counts: Vec<usize>,
    pub flags: Vec<Flag>,
}

impl InterimSnapshot {
    pub fn n_strata(&self) -> usize {
        self.p_hat.len()
    }

    pub fn mu(&self, x: usize, arm: Arm) -> f64 {
        self.mu_hat[x][arm.index()]
    }

    pub fn sigma2(&self, x: usize, arm: Arm) -> f64 {
        self.sigma2_hat[x][arm.index()]
    }

    /// Σ p̂(x) (τ̂(x) - τ̂)².
    pub fn heterogeneity(&self) -> f64 {
        self.p_hat
            .iter()
            .zip(&self.tau_hat_x)
            .map(|(p, tx)| p * (tx - self.tau_hat).powi(2))
            .sum()
    }

    /// A snapshot whose estimates equal the population truth, with the given
    /// delay CDF standing in for ρ̂. `t = 0` describes the planning problem
    /// before any stage has run.
    pub fn from_truth(dgp: &DgpSpec, r: &[f64], t: usize, rho: DelayCdf) -> InterimSnapshot {
        let k = dgp.n_strata();
        let mu_hat: Vec<[f64; 2]> = (0..k)
            .map(|x| [dgp.mean(x, Arm::Control), dgp.mean(x, Arm::Treated)])
            .collect();
        let sigma2_hat = (0..k)
            .map(|x| [dgp.variance(x, Arm::Control), dgp.variance(x, Arm::Treated)])
            .collect();
        let tau_hat_x: Vec<f64> = (0..k).map(|x| dgp.tau_x(x)).collect();
        InterimSnapshot {
            t,
            horizon: r.len(),
            family: dgp.outcome_family,
            p_hat: dgp.frequencies(),
            r_hat: r.to_vec(),
            mu_hat,
            sigma2_hat,
            rho_hat: rho,
            tau_hat: dgp.ate(),
            tau_hat_x,
            cell_counts: vec![[0, 0]; k],
            stratum_counts: vec![0; k],
            flags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayEstimate {
    pub cdf: DelayCdf,
    pub flags: Vec<Flag>,
}

/// ρ̂_t(d | x, a) for d ≤ t-1. Lags beyond the estimable horizon hold the
/// last estimated value until [`extrapolate_delay_cdf`] replaces them.
pub fn estimate_delay_cdf(
    history: &[ParticipantRecord],
    t: usize,
    n_strata: usize,
    horizon: usize,
) -> DelayEstimate {
    assert!(t >= 1, "delay estimation needs at least one completed stage");
    let max_lag = (t - 1).min(horizon - 1);
    // per (x, a): enrollees by stage, and lag hits by stage
    let mut by_stage = vec![vec![0usize; t + 1]; n_strata * 2];
    let mut hits = vec![vec![0usize; max_lag + 1]; n_strata * 2];
    for rec in history.iter().filter(|r| r.stage <= t) {
        let cell = rec.stratum * 2 + rec.arm.index();
        by_stage[cell][rec.stage] += 1;
        if let Some(l) = rec.delay.lag() {
            if l <= max_lag && rec.stage + l <= t {
                hits[cell][l] += 1;
            }
        }
    }

    let mut cdf = DelayCdf::filled(horizon, n_strata, 0.0);
    let mut flags = Vec::new();
    for x in 0..n_strata {
        for arm in Arm::BOTH {
            let cell = x * 2 + arm.index();
            let mut acc = 0.0;
            for l in 0..=max_lag {
                let denom: usize = by_stage[cell][1..=t - l].iter().sum();
                if denom == 0 {
                    flags.push(Flag::EmptyDelayCell { stratum: x, arm, lag: l });
                } else {
                    acc += hits[cell][l] as f64 / denom as f64;
                }
                cdf.set(l, x, arm, acc.min(1.0));
            }
            let last = acc.min(1.0);
            for d in max_lag + 1..horizon {
                cdf.set(d, x, arm, last);
            }
        }
    }
    cdf.estimable_horizon = Some(max_lag);
    DelayEstimate { cdf, flags }
}

/// Completes ρ̂_t beyond lag t-1 according to the extrapolation rule.
pub fn extrapolate_delay_cdf(partial: &DelayCdf, t: usize, rule: Extrapolation) -> DelayCdf {
    let horizon = partial.horizon();
    let mut out = partial.clone();
    if t == 0 || t >= horizon {
        return out;
    }
    let last = t - 1;
    let span = (horizon - t) as f64;
    for x in 0..partial.n_strata() {
        for arm in Arm::BOTH {
            let base = partial.get(last, x, arm);
            for d in t..horizon {
                let v = match rule {
                    Extrapolation::Conservative => base,
                    Extrapolation::Optimistic => 1.0,
                    Extrapolation::Neutral => base + (d - last) as f64 * (1.0 - base) / span,
                };
                out.set(d, x, arm, v.clamp(base, 1.0));
            }
        }
    }
    out.estimable_horizon = Some(last);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mu: Vec<[f64; 2]>,
    pub sigma2: Vec<[f64; 2]>,
    pub counts: Vec<[usize; 2]>,
    pub flags: Vec<Flag>,
}

fn mean_var(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
    Some((m, v))
}

/// Sample mean and population (1/n) variance of visible outcomes per cell.
///
/// Empty cells fall back to the pooled stratum moments, then to the grand
/// moments over every visible outcome, then to (0, 1).
pub fn estimate_moments(history: &[ParticipantRecord], t: usize, n_strata: usize) -> MomentEstimate {
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); n_strata * 2];
    for rec in history.iter().filter(|r| visible_at(r, t)) {
        debug_assert!(rec.stage <= t, "visible record enrolled after the analysis stage");
        cells[rec.stratum * 2 + rec.arm.index()].push(rec.outcome);
    }
    let all: Vec<f64> = cells.iter().flatten().copied().collect();
    let grand = mean_var(&all).unwrap_or((0.0, 1.0));

    let mut mu = vec![[0.0; 2]; n_strata];
    let mut sigma2 = vec![[0.0; 2]; n_strata];
    let mut counts = vec![[0usize; 2]; n_strata];
    let mut flags = Vec::new();
    for x in 0..n_strata {
        let pooled: Vec<f64> = cells[x * 2].iter().chain(&cells[x * 2 + 1]).copied().collect();
        let fallback = mean_var(&pooled).unwrap_or(grand);
        for arm in Arm::BOTH {
            let a = arm.index();
            let vals = &cells[x * 2 + a];
            counts[x][a] = vals.len();
            match mean_var(vals) {
                Some((m, v)) => {
                    mu[x][a] = m;
                    sigma2[x][a] = v;
                    if vals.len() < 2 {
                        flags.push(Flag::DegenerateVariance { stratum: x, arm });
                    }
                }
                None => {
                    mu[x][a] = fallback.0;
                    sigma2[x][a] = fallback.1;
                    flags.push(Flag::EmptyMomentCell { stratum: x, arm });
                }
            }
        }
    }
    MomentEstimate {
        mu,
        sigma2,
        counts,
        flags,
    }
}

/// Runs every interim estimator on the history as known after stage `t`.
pub fn build_snapshot(history: &[ParticipantRecord], t: usize, cfg: &TrialConfig) -> InterimSnapshot {
    let k = cfg.n_strata();
    let horizon = cfg.horizon;
    let mut flags = Vec::new();

    let mut stratum_counts = vec![0usize; k];
    let mut enrolled = 0usize;
    for rec in history.iter().filter(|r| r.stage <= t) {
        stratum_counts[rec.stratum] += 1;
        enrolled += 1;
    }
    let p_hat: Vec<f64> = if enrolled == 0 {
        vec![0.0; k]
    } else {
        stratum_counts.iter().map(|&c| c as f64 / enrolled as f64).collect()
    };
    for (x, &c) in stratum_counts.iter().enumerate() {
        if c == 0 {
            flags.push(Flag::EmptyStratum { stratum: x });
        }
    }

    let delays = estimate_delay_cdf(history, t, k, horizon);
    flags.extend(delays.flags);
    let rho_hat = extrapolate_delay_cdf(&delays.cdf, t, cfg.extrapolation);

    let moments = estimate_moments(history, t, k);
    flags.extend(moments.flags);

    let tau_hat_x: Vec<f64> = moments.mu.iter().map(|m| m[1] - m[0]).collect();
    let tau_hat = p_hat.iter().zip(&tau_hat_x).map(|(p, tx)| p * tx).sum();

    InterimSnapshot {
        t,
        horizon,
        family: cfg.family(),
        p_hat,
        r_hat: cfg.stage_fractions(),
        mu_hat: moments.mu,
        sigma2_hat: moments.sigma2,
        rho_hat,
        tau_hat_x,
        tau_hat,
        cell_counts: moments.counts,
        stratum_counts,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Delay;
    use proptest::prelude::*;

    fn rec(id: u64, stage: usize, x: usize, arm: Arm, delay: Option<u32>, y: f64) -> ParticipantRecord {
        ParticipantRecord {
            id,
            stage,
            stratum: x,
            arm,
            delay: delay.map(Delay::Lag).unwrap_or(Delay::Censored),
            outcome: y,
        }
    }

    #[test]
    fn delay_cdf_hand_count() {
        // stage 1: D = 0, 0, 1; stage 2: D = 0, 1 (the latter not yet visible)
        let h = vec![
            rec(1, 1, 0, Arm::Treated, Some(0), 1.0),
            rec(2, 1, 0, Arm::Treated, Some(0), 1.0),
            rec(3, 1, 0, Arm::Treated, Some(1), 1.0),
            rec(4, 2, 0, Arm::Treated, Some(0), 1.0),
            rec(5, 2, 0, Arm::Treated, Some(1), 1.0),
        ];
        let est = estimate_delay_cdf(&h, 2, 1, 4);
        assert!((est.cdf.get(0, 0, Arm::Treated) - 3.0 / 5.0).abs() < 1e-15);
        assert!((est.cdf.get(1, 0, Arm::Treated) - 14.0 / 15.0).abs() < 1e-15);
        assert_eq!(est.cdf.estimable_horizon, Some(1));
        // the control cell is empty at both lags
        assert_eq!(
            est.flags.iter().filter(|f| matches!(f, Flag::EmptyDelayCell { arm: Arm::Control, .. })).count(),
            2
        );
    }

    #[test]
    fn censored_records_only_enter_denominators() {
        let h = vec![
            rec(1, 1, 0, Arm::Control, Some(0), 0.0),
            rec(2, 1, 0, Arm::Control, None, 0.0),
        ];
        let est = estimate_delay_cdf(&h, 3, 1, 4);
        for d in 0..3 {
            assert!((est.cdf.get(d, 0, Arm::Control) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn no_delays_gives_all_ones() {
        let h: Vec<_> = (0..30)
            .map(|i| rec(i, 1 + (i as usize % 3), (i % 2) as usize, Arm::BOTH[(i / 2 % 2) as usize], Some(0), 0.0))
            .collect();
        let est = estimate_delay_cdf(&h, 3, 2, 4);
        for x in 0..2 {
            for a in Arm::BOTH {
                assert!(est.cdf.profile(x, a).iter().all(|&v| v == 1.0));
            }
        }
    }

    fn partial_08() -> DelayCdf {
        let mut c = DelayCdf::filled(4, 1, 0.0);
        for a in Arm::BOTH {
            c.set(0, 0, a, 0.6);
            c.set(1, 0, a, 0.8);
            c.set(2, 0, a, 0.8);
            c.set(3, 0, a, 0.8);
        }
        c
    }

    #[test]
    fn extrapolation_rules() {
        let p = partial_08();
        let cons = extrapolate_delay_cdf(&p, 2, Extrapolation::Conservative);
        assert_eq!(cons.profile(0, Arm::Treated), &[0.6, 0.8, 0.8, 0.8]);
        let opt = extrapolate_delay_cdf(&p, 2, Extrapolation::Optimistic);
        assert_eq!(opt.profile(0, Arm::Treated), &[0.6, 0.8, 1.0, 1.0]);
        let neu = extrapolate_delay_cdf(&p, 2, Extrapolation::Neutral);
        let prof = neu.profile(0, Arm::Treated);
        assert!((prof[2] - 0.9).abs() < 1e-15 && (prof[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn moments_and_degenerate_cells() {
        let h = vec![
            rec(1, 1, 0, Arm::Treated, Some(0), 1.0),
            rec(2, 1, 0, Arm::Treated, Some(0), 3.0),
            rec(3, 1, 0, Arm::Control, Some(0), 5.0),
            rec(4, 1, 0, Arm::Control, Some(2), 100.0),
        ];
        let m = estimate_moments(&h, 1, 1);
        assert_eq!(m.mu[0], [5.0, 2.0]);
        assert_eq!(m.sigma2[0], [0.0, 1.0]);
        assert_eq!(m.counts[0], [1, 2]);
        assert!(m.flags.contains(&Flag::DegenerateVariance { stratum: 0, arm: Arm::Control }));
    }

    #[test]
    fn empty_cell_uses_pooled_then_grand() {
        let h = vec![
            rec(1, 1, 0, Arm::Treated, Some(0), 1.0),
            rec(2, 1, 0, Arm::Treated, Some(0), 3.0),
            rec(3, 1, 1, Arm::Treated, Some(5), 3.0),
        ];
        let m = estimate_moments(&h, 1, 2);
        assert_eq!(m.mu[0][0], 2.0);
        assert_eq!(m.sigma2[0][0], 1.0);
        assert_eq!(m.mu[1], [2.0, 2.0]);
        assert!(m.flags.contains(&Flag::EmptyMomentCell { stratum: 1, arm: Arm::Treated }));
    }

    proptest! {
        #[test]
        fn extrapolations_are_ordered_and_monotone(
            steps in prop::collection::vec(0.0f64..0.3, 6),
            t in 1usize..6,
        ) {
            let horizon = 6;
            let mut c = DelayCdf::filled(horizon, 1, 0.0);
            let mut acc = 0.0f64;
            for (d, s) in steps.iter().enumerate() {
                acc = (acc + s).min(1.0);
                for a in Arm::BOTH { c.set(d, 0, a, acc); }
            }
            let c = c.truncated(t);
            let cons = extrapolate_delay_cdf(&c, t, Extrapolation::Conservative);
            let neu = extrapolate_delay_cdf(&c, t, Extrapolation::Neutral);
            let opt = extrapolate_delay_cdf(&c, t, Extrapolation::Optimistic);
            prop_assert!(cons.is_monotone() && neu.is_monotone() && opt.is_monotone());
            for d in 0..horizon {
                let (a, b, e) = (cons.get(d, 0, Arm::Treated), neu.get(d, 0, Arm::Treated), opt.get(d, 0, Arm::Treated));
                prop_assert!(a <= b + 1e-15 && b <= e + 1e-15);
            }
        }
    }
}
