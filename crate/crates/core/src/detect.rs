//! Passive detection with the all-ones design: reject `H0: A = 0` when the
//! sum of observations exceeds `sigma * sqrt(2 m log(1/alpha))`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{BudgetLedger, Channel, LiveChannel, PhaseTag, SensingMatrix};
use crate::model::{RngHandle, SignalInstance, StreamTag};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

pub fn detection_threshold(m: usize, sigma: f64, alpha: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::param("detection needs m >= 1"));
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma = {sigma} must be positive")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(sigma * (2.0 * m as f64 * alpha.recip().ln()).sqrt())
}

/// Takes `m` all-ones measurements of `instance` and applies the sum test.
pub fn run_detection(instance: &SignalInstance, m: usize, alpha: f64, noise: &RngHandle) -> Result<DetectionOutcome> {
    let threshold = detection_threshold(m, instance.sigma, alpha)?;
    let x = Arc::new(SensingMatrix::all_ones(instance.shape()));
    let mut channel = LiveChannel::new(instance, noise.rng(), BudgetLedger::new(m));
    let statistic = channel.measure_sum(&x, PhaseTag::Detection, m)?;
    Ok(DetectionOutcome {
        statistic,
        threshold,
        reject: statistic > threshold,
    })
}

/// Problem parameters for a detection experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionParams {
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub sigma: f64,
    pub m: usize,
    pub alpha: f64,
}

impl DetectionParams {
    /// Whether `k <= n/2` on both axes, the regime where the test's guarantee
    /// is exercised. Larger blocks are allowed but flagged.
    pub fn small_block(&self) -> bool {
        2 * self.k1 <= self.n1 && 2 * self.k2 <= self.n2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskRow {
    pub mu: f64,
    #[serde(rename = "type_I")]
    pub type_i: f64,
    #[serde(rename = "type_II")]
    pub type_ii: f64,
    pub risk: f64,
    pub trials: usize,
    pub stderr: f64,
}

/// Fraction of `trials` runs that reject, each run on a fresh
/// `B* ~ uniform` (or on `fixed` when given) with its own noise stream.
/// Trial `t` uses stream index `first_trial + t`.
pub fn rejection_rate(
    params: &DetectionParams,
    mu: f64,
    fixed: Option<&SignalInstance>,
    trials: usize,
    seed: u64,
    first_trial: u64,
) -> Result<f64> {
    let rejects = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let trial = first_trial + t;
            let instance = match fixed {
                Some(inst) => inst.with_mu(mu),
                None => {
                    let mut rng = RngHandle::derive(seed, trial, StreamTag::Instance).rng();
                    SignalInstance::sample(params.n1, params.n2, params.k1, params.k2, mu, params.sigma, &mut rng)?
                }
            };
            let outcome = run_detection(&instance, params.m, params.alpha, &RngHandle::derive(seed, trial, StreamTag::Noise))?;
            Ok(outcome.reject as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(rejects as f64 / trials as f64)
}

/// Empirical type I, type II and total risk for each amplitude in `mu_grid`.
///
/// Type II error is estimated with `B*` drawn uniformly; since the all-ones
/// statistic does not depend on where `B*` sits, this is also the worst case.
pub fn estimate_detection_risk(params: &DetectionParams, mu_grid: &[f64], trials: usize, seed: u64) -> Result<Vec<RiskRow>> {
    if trials == 0 {
        return Err(Error::param("trials must be >= 1"));
    }
    detection_threshold(params.m, params.sigma, params.alpha)?;
    let span = 2 * trials as u64;
    mu_grid
        .iter()
        .enumerate()
        .map(|(row, &mu)| {
            let base = row as u64 * span;
            let type_i = rejection_rate(params, 0.0, None, trials, seed, base)?;
            let type_ii = 1.0 - rejection_rate(params, mu, None, trials, seed, base + trials as u64)?;
            let t = trials as f64;
            let stderr = (type_i * (1.0 - type_i) / t + type_ii * (1.0 - type_ii) / t).sqrt();
            Ok(RiskRow {
                mu,
                type_i,
                type_ii,
                risk: type_i + type_ii,
                trials,
                stderr,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{self, BoundQuery};
    use crate::model::Block;

    #[test]
    fn threshold_values() {
        let t = detection_threshold(100, 1.0, 0.05).unwrap();
        assert!((t - (200.0 * 20f64.ln()).sqrt()).abs() < 1e-12);
        assert!((t - 24.478).abs() < 1e-3);
        let t = detection_threshold(1, 1.0, (-1f64).exp()).unwrap();
        assert!((t - 2f64.sqrt()).abs() < 1e-12);
        let a = detection_threshold(37, 0.7, 0.2).unwrap();
        let b = detection_threshold(37, 1.4, 0.2).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn threshold_rejects_bad_input() {
        assert!(detection_threshold(0, 1.0, 0.1).is_err());
        assert!(detection_threshold(5, 0.0, 0.1).is_err());
        assert!(detection_threshold(5, 1.0, 1.0).is_err());
        assert!(detection_threshold(5, 1.0, 0.0).is_err());
    }

    #[test]
    fn noiseless_alternative_always_rejects() {
        let inst = SignalInstance::new(16, 16, 0.3, 1e-12, Block::new(5, 9, 3, 3)).unwrap();
        for t in 0..20 {
            let out = run_detection(&inst, 10, 0.05, &RngHandle::new(1, t)).unwrap();
            assert!(out.reject);
            assert!(out.statistic > out.threshold);
            assert!((out.statistic - 10.0 * 0.3 * 9.0 / 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn null_statistic_is_normal() {
        // statistic / sqrt(m) ~ N(0, sigma^2); compare against the standard normal CDF
        let sigma = 2.0;
        let m = 25;
        let inst = SignalInstance::new(8, 8, 0.0, sigma, Block::new(1, 1, 2, 2)).unwrap();
        let mut z: Vec<f64> = (0..2000)
            .map(|t| run_detection(&inst, m, 0.05, &RngHandle::new(11, t)).unwrap().statistic / (m as f64).sqrt() / sigma)
            .collect();
        z.sort_by(f64::total_cmp);
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        use statrs::distribution::ContinuousCDF;
        let n = z.len() as f64;
        let ks = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal.cdf(v);
                (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.05, "KS distance {ks}");
    }

    #[test]
    fn risk_table_shape() {
        let params = DetectionParams {
            n1: 32,
            n2: 32,
            k1: 4,
            k2: 4,
            sigma: 1.0,
            m: 50,
            alpha: 0.05,
        };
        let q = BoundQuery::new(32, 32, 4, 4, 50, 1.0, 0.05);
        let ub = bounds::detection_ub(&q).value;
        let rows = estimate_detection_risk(&params, &[0.0, 0.5 * ub, ub, 10.0 * ub], 1000, 3).unwrap();
        assert!((rows[0].type_ii - (1.0 - rows[0].type_i)).abs() <= 4.0 * rows[0].stderr.max(0.01));
        assert!(rows[3].type_ii == 0.0);
        for w in rows.windows(2) {
            assert!(w[1].type_ii <= w[0].type_ii + 3.0 * w[0].stderr.max(w[1].stderr) + 1e-9);
        }
        assert!(rows
            .iter()
            .all(|r| r.trials == 1000 && (r.risk - r.type_i - r.type_ii).abs() < 1e-15));
    }

    #[test]
    fn strong_signal_has_small_risk() {
        let params = DetectionParams {
            n1: 32,
            n2: 32,
            k1: 4,
            k2: 4,
            sigma: 1.0,
            m: 50,
            alpha: 0.01,
        };
        let ub = bounds::detection_ub(&BoundQuery::new(32, 32, 4, 4, 50, 1.0, 0.01)).value;
        let rows = estimate_detection_risk(&params, &[10.0 * ub], 1000, 8).unwrap();
        assert!(rows[0].risk <= 0.01, "{:?}", rows[0]);
    }

    #[test]
    fn power_does_not_depend_on_position() {
        let params = DetectionParams {
            n1: 24,
            n2: 24,
            k1: 3,
            k2: 3,
            sigma: 1.0,
            m: 40,
            alpha: 0.1,
        };
        let mu = 0.8 * bounds::detection_ub(&BoundQuery::new(24, 24, 3, 3, 40, 1.0, 0.1)).value;
        let corner = SignalInstance::new(24, 24, mu, 1.0, Block::new(1, 1, 3, 3)).unwrap();
        let center = SignalInstance::new(24, 24, mu, 1.0, Block::new(11, 13, 3, 3)).unwrap();
        let trials = 2000;
        let a = rejection_rate(&params, mu, Some(&corner), trials, 5, 0).unwrap();
        let b = rejection_rate(&params, mu, Some(&center), trials, 5, trials as u64).unwrap();
        let se = (a * (1.0 - a) / trials as f64 + b * (1.0 - b) / trials as f64).sqrt();
        assert!((a - b).abs() <= 4.0 * se, "{a} vs {b}");
    }

    #[test]
    fn small_block_flag() {
        let mut p = DetectionParams {
            n1: 16,
            n2: 16,
            k1: 8,
            k2: 8,
            sigma: 1.0,
            m: 1,
            alpha: 0.1,
        };
        assert!(p.small_block());
        p.k2 = 9;
        assert!(!p.small_block());
    }
}
