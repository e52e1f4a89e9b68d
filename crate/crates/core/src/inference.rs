//! End-of-trial estimation: τ̂_T, V̂_T and the normal confidence interval.

use serde::Serialize;

use crate::error::{CaraError, Flag, Result};
use crate::estimation::estimate_moments;
use crate::model::{Arm, ParticipantRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteEstimate {
    pub tau_hat_x: Vec<f64>,
    pub tau_hat: f64,
    pub p_hat: Vec<f64>,
    pub flags: Vec<Flag>,
}

fn stratum_counts(history: &[ParticipantRecord], n_strata: usize) -> Vec<usize> {
    let mut c = vec![0usize; n_strata];
    for r in history {
        c[r.stratum] += 1;
    }
    c
}

/// τ̂_T = Σ p̂_T(x) (μ̂_T(x,1) - μ̂_T(x,0)) over outcomes visible at `horizon`.
pub fn estimate_ate(history: &[ParticipantRecord], horizon: usize, n_strata: usize) -> AteEstimate {
    let counts = stratum_counts(history, n_strata);
    let n = history.len().max(1) as f64;
    let p_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let m = estimate_moments(history, horizon, n_strata);
    let mut flags = Vec::new();
    for (x, cc) in m.counts.iter().enumerate() {
        for arm in Arm::BOTH {
            if cc[arm.index()] == 0 {
                flags.push(Flag::EmptyCell { stratum: x, arm });
            }
        }
    }
    let tau_hat_x: Vec<f64> = m.mu.iter().map(|mu| mu[1] - mu[0]).collect();
    let tau_hat = p_hat.iter().zip(&tau_hat_x).map(|(p, t)| p * t).sum();
    AteEstimate {
        tau_hat_x,
        tau_hat,
        p_hat,
        flags,
    }
}

/// V̂_T with ê_T(x,a) = (visible (x,a) count) / (count of stratum x).
pub fn estimate_variance(history: &[ParticipantRecord], horizon: usize, n_strata: usize) -> Result<f64> {
    let counts = stratum_counts(history, n_strata);
    let n = history.len() as f64;
    let m = estimate_moments(history, horizon, n_strata);
    let tau_x: Vec<f64> = m.mu.iter().map(|mu| mu[1] - mu[0]).collect();
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let tau: f64 = p.iter().zip(&tau_x).map(|(p, t)| p * t).sum();
    let mut v = 0.0;
    for x in 0..n_strata {
        if counts[x] == 0 {
            continue;
        }
        let mut term = (tau_x[x] - tau).powi(2);
        for arm in Arm::BOTH {
            let a = arm.index();
            if m.counts[x][a] == 0 {
                return Err(CaraError::EmptyCell { stratum: x, arm });
            }
            let e = m.counts[x][a] as f64 / counts[x] as f64;
            term += m.sigma2[x][a] / e;
        }
        v += p[x] * term;
    }
    Ok(v)
}

/// Standard normal quantile (Wichura AS241, about 1e-16 relative accuracy).
#[allow(clippy::inconsistent_digit_grouping, clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_13) * r + 67265.770_927_008_7) * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((r * 5226.495_278_852_546 + 28729.085_735_721_943) * r + 39307.895_800_092_71) * r
            + 21213.794_301_586_597)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((r * 1.050_750_071_644_416_8e-9 + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_08)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_888)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// τ̂ ± z_{1-α/2} √(V̂ / N).
pub fn confidence_interval(tau_hat: f64, v_hat: f64, n: usize, alpha: f64) -> (f64, f64) {
    assert!(v_hat >= 0.0 && n >= 1, "need V̂ ≥ 0 and N ≥ 1");
    if alpha >= 1.0 || v_hat == 0.0 {
        return (tau_hat, tau_hat);
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * (v_hat / n as f64).sqrt();
    (tau_hat - half, tau_hat + half)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub tau_hat: f64,
    pub tau_hat_x: Vec<f64>,
    pub v_hat: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n: usize,
    pub alpha: f64,
    pub warnings: Vec<Flag>,
}

impl InferenceReport {
    /// Two-sided test of τ = 0; `None` when the interval was suppressed.
    pub fn rejects_zero(&self) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo > 0.0 || hi < 0.0)
    }

    pub fn covers(&self, tau: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= tau && tau <= hi)
    }
}

/// Point estimate, variance and interval; the interval is suppressed when
/// any (x, a) cell has no visible outcome.
pub fn infer(history: &[ParticipantRecord], horizon: usize, n_strata: usize, alpha: f64) -> InferenceReport {
    let ate = estimate_ate(history, horizon, n_strata);
    let n = history.len();
    let (v_hat, ci) = if ate.flags.is_empty() && n > 0 {
        match estimate_variance(history, horizon, n_strata) {
            Ok(v) => (Some(v), Some(confidence_interval(ate.tau_hat, v, n, alpha))),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };
    InferenceReport {
        tau_hat: ate.tau_hat,
        tau_hat_x: ate.tau_hat_x,
        v_hat,
        ci,
        n,
        alpha,
        warnings: ate.flags,
    }
}
