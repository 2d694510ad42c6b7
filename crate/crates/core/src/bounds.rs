//! Closed-form SNR thresholds for detection and localization.
//!
//! Every evaluator returns an amplitude `mu` (in the units of `sigma`) and
//! uses natural logarithms. Existential constants are explicit arguments or
//! fields defaulting to 1.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Parameter tuple shared by all evaluators. `level` is the risk level
/// (`alpha` for tests and passive localization, `delta` for the adaptive
/// procedure).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundQuery {
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub m: usize,
    pub sigma: f64,
    pub level: f64,
}

impl BoundQuery {
    pub fn new(n1: usize, n2: usize, k1: usize, k2: usize, m: usize, sigma: f64, level: f64) -> Self {
        BoundQuery {
            n1,
            n2,
            k1,
            k2,
            m,
            sigma,
            level,
        }
    }

    pub fn square(n: usize, k: usize, m: usize, sigma: f64, level: f64) -> Self {
        Self::new(n, n, k, k, m, sigma, level)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.k1 == 0 || self.k2 == 0 || self.m == 0 {
            return Err(Error::param(format!("bound query has a zero dimension: {self:?}")));
        }
        if self.k1 > self.n1 || self.k2 > self.n2 {
            return Err(Error::param(format!("block larger than matrix: {self:?}")));
        }
        if !(self.sigma > 0.0) || !(self.level > 0.0 && self.level <= 1.0) {
            return Err(Error::param(format!("need sigma > 0 and level in (0, 1]: {self:?}")));
        }
        Ok(())
    }

    fn dims(&self) -> (f64, f64, f64, f64, f64) {
        (self.n1 as f64, self.n2 as f64, self.k1 as f64, self.k2 as f64, self.m as f64)
    }

    fn kmin(&self) -> f64 {
        self.k1.min(self.k2) as f64
    }

    fn kmax(&self) -> f64 {
        self.k1.max(self.k2) as f64
    }

    /// `log max(n1 - k1, n2 - k2)`
    fn log_gap(&self) -> f64 {
        ((self.n1 - self.k1).max(self.n2 - self.k2) as f64).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundFlag {
    /// Outside the formula's domain; the value is `+inf`.
    Degenerate,
    /// One branch of a `max` was undefined and left out.
    BranchDropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    /// 1-based index of the `max` branch that attained the value, if any.
    pub branch: Option<u8>,
    pub flag: Option<BoundFlag>,
}

impl Bound {
    fn plain(value: f64) -> Self {
        Bound {
            value,
            branch: None,
            flag: None,
        }
    }

    fn degenerate() -> Self {
        Bound {
            value: f64::INFINITY,
            branch: None,
            flag: Some(BoundFlag::Degenerate),
        }
    }

    /// Max over the defined branches; undefined branches are `None`.
    fn max_of(branches: &[Option<f64>]) -> Self {
        let mut best: Option<(usize, f64)> = None;
        for (i, b) in branches.iter().enumerate() {
            if let Some(v) = *b {
                if best.is_none_or(|(_, w)| v > w) {
                    best = Some((i, v));
                }
            }
        }
        let dropped = branches.iter().any(Option::is_none);
        match best {
            Some((i, v)) => Bound {
                value: v,
                branch: Some(i as u8 + 1),
                flag: dropped.then_some(BoundFlag::BranchDropped),
            },
            None => Bound::degenerate(),
        }
    }
}

/// Detection is impossible below
/// `sigma (1 - alpha) sqrt(16 (n1-k1)(n2-k2) / (m k1^2 k2^2))`.
pub fn detection_lb(q: &BoundQuery) -> Bound {
    if q.k1 >= q.n1 || q.k2 >= q.n2 {
        return Bound::degenerate();
    }
    let (n1, n2, k1, k2, m) = q.dims();
    Bound::plain(q.sigma * (1.0 - q.level) * (16.0 * (n1 - k1) * (n2 - k2) / (m * k1 * k1 * k2 * k2)).sqrt())
}

/// The all-ones sum test has risk at most `alpha` above
/// `sigma sqrt(8 n1 n2 log(1/alpha) / (m k1^2 k2^2))`.
pub fn detection_ub(q: &BoundQuery) -> Bound {
    let (n1, n2, k1, k2, m) = q.dims();
    Bound::plain(q.sigma * (8.0 * n1 * n2 * q.level.recip().ln() / (m * k1 * k1 * k2 * k2)).sqrt())
}

/// Passive localization lower bound with constant `c`.
pub fn passive_loc_lb(q: &BoundQuery, c: f64) -> Bound {
    let (n1, n2, k1, k2, m) = q.dims();
    let scale = n1 * n2 / m;
    let mut b = Bound::max_of(&[Some(q.kmin().recip()), Some(q.log_gap() / (k1 * k2))]);
    b.value = c * q.sigma * (scale * b.value).sqrt();
    b
}

/// Passive least-squares localization upper bound with constant `c2`.
pub fn passive_loc_ub(q: &BoundQuery, c2: f64) -> Bound {
    let (n1, n2, k1, k2, m) = q.dims();
    let scale = n1 * n2 / m * (2.0 / q.level).ln();
    let mut b = Bound::max_of(&[Some(q.kmax().ln() / q.kmin()), Some(q.log_gap() / (k1 * k2))]);
    b.value = c2 * q.sigma * (scale * b.value).sqrt();
    b
}

/// Measurements the passive upper bound needs: `c1 log max(n1-k1, n2-k2)`.
pub fn passive_loc_min_measurements(q: &BoundQuery, c1: f64) -> f64 {
    c1 * q.log_gap()
}

/// Adaptive localization lower bound.
pub fn active_loc_lb(q: &BoundQuery) -> Bound {
    let (n1, n2, k1, k2, m) = q.dims();
    let area = ((n1 - k1) * (n2 / 2.0 - k2)).max((n1 / 2.0 - k1) * (n2 - k2));
    let coarse = (area > 0.0).then(|| (2.0 * area / (m * k1 * k1 * k2 * k2)).sqrt());
    let fine = Some((8.0 / (m * q.kmin())).sqrt());
    let mut b = Bound::max_of(&[coarse, fine]);
    b.value *= q.sigma * (1.0 - q.level);
    b
}

/// Explicit-constant sufficient amplitude for the adaptive procedure, with
/// `m` the per-unit budget (the procedure spends `22 m` in total).
pub fn active_loc_ub(q: &BoundQuery) -> Bound {
    let (n1, n2, k1, k2, m) = q.dims();
    let s2 = q.sigma * q.sigma;
    let coarse = Some((352.0 * s2 * n1 * n2 * (4.0 / q.level + 1.0).ln() / (m * k1 * k1 * k2 * k2)).sqrt());
    let lk = q.kmax().ln();
    let fine = (q.kmax() >= 2.0).then(|| (1408.0 * s2 * lk * (24.0 * lk / q.level).ln() / (m * q.kmin())).sqrt());
    Bound::max_of(&[coarse, fine])
}

/// `ln C(n, k)` through log-gamma; `-inf` when `k > n`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Upper bound for exhaustive search over non-contiguous `k1 x k2`
/// biclusters, constant `c1`.
pub fn bicluster_passive_ub(q: &BoundQuery, c1: f64) -> Bound {
    let (n1, n2, k1, k2, m) = q.dims();
    let gap = (n1 - k1) * (n2 - k2);
    if gap <= 1.0 {
        return Bound::degenerate();
    }
    Bound::plain(c1 * q.sigma * (n1 * n2 / m * (2.0 / q.level).ln() * gap.ln() / (k1 + k2)).sqrt())
}

/// Lower bound for non-contiguous biclusters, constant `c2`.
pub fn bicluster_passive_lb(q: &BoundQuery, c2: f64) -> Bound {
    let (n1, n2, k1, k2, m) = q.dims();
    let rows = (q.n1 > q.k1).then(|| (n1 - k1).ln() / k2);
    let cols = (q.n2 > q.k2).then(|| (n2 - k2).ln() / k1);
    let comb = ln_binomial(q.n1 - q.k1, q.k1) + ln_binomial(q.n2 - q.k2, q.k2);
    let comb = comb.is_finite().then(|| comb / (k1 * k2));
    let mut b = Bound::max_of(&[rows, cols, comb]);
    if b.value.is_finite() {
        b.value = c2 * q.sigma * (n1 * n2 / m * b.value.max(0.0)).sqrt();
    }
    b
}

/// Selector for the command line and sweep reference curves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Which {
    DetLb,
    DetUb,
    PlocLb,
    PlocUb,
    AlocLb,
    AlocUb,
    BicUb,
    BicLb,
}

impl Which {
    pub const ALL: [Which; 8] = [
        Which::DetLb,
        Which::DetUb,
        Which::PlocLb,
        Which::PlocUb,
        Which::AlocLb,
        Which::AlocUb,
        Which::BicUb,
        Which::BicLb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Which::DetLb => "det-lb",
            Which::DetUb => "det-ub",
            Which::PlocLb => "ploc-lb",
            Which::PlocUb => "ploc-ub",
            Which::AlocLb => "aloc-lb",
            Which::AlocUb => "aloc-ub",
            Which::BicUb => "bic-ub",
            Which::BicLb => "bic-lb",
        }
    }

    /// Evaluates with every existential constant set to `c`.
    pub fn evaluate(&self, q: &BoundQuery, c: f64) -> Bound {
        match self {
            Which::DetLb => detection_lb(q),
            Which::DetUb => detection_ub(q),
            Which::PlocLb => passive_loc_lb(q, c),
            Which::PlocUb => passive_loc_ub(q, c),
            Which::AlocLb => active_loc_lb(q),
            Which::AlocUb => active_loc_ub(q),
            Which::BicUb => bicluster_passive_ub(q, c),
            Which::BicLb => bicluster_passive_lb(q, c),
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Which::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::param(format!("unknown bound '{s}'")))
    }
}
