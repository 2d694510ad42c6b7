//! Passive localization by exhaustive least squares over all contiguous
//! blocks.
//!
//! For a block `B` let `z_i(B)` be the sum of the entries of `X_i` inside `B`.
//! Fitting `y ~ mu z(B)` gives `mu_hat(B) = <z, y> / |z|^2` and residual
//! `f(B) = |y|^2 - <z, y>^2 / |z|^2`; the estimate is the block with the
//! smallest residual. Per-block sums come from an integral image, so one
//! measurement costs `O(n1 n2)` regardless of the block size.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{measure, BudgetLedger, PhaseTag, SensingMatrix};
use crate::model::{Block, BlockFamily, RngHandle, Shape, SignalInstance, StreamTag};

/// Block sums `z(B)` for every position of a `k1 x k2` window, row-major over
/// `(row_start, col_start)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSums {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl BlockSums {
    pub fn at(&self, row_start: usize, col_start: usize) -> f64 {
        self.values[(row_start - 1) * self.cols + col_start - 1]
    }
}

/// Summed-area table with a zero first row and column: entry `(i, j)` holds
/// the sum of all values strictly above and left of `(i, j)`.
struct IntegralImage {
    stride: usize,
    data: Vec<f64>,
}

impl IntegralImage {
    fn new(shape: Shape, values: &[f64]) -> Self {
        let Shape { n1, n2 } = shape;
        let stride = n2 + 1;
        let mut data = vec![0.0; (n1 + 1) * stride];
        for i in 0..n1 {
            let mut run = 0.0;
            for j in 0..n2 {
                run += values[i * n2 + j];
                data[(i + 1) * stride + j + 1] = data[i * stride + j + 1] + run;
            }
        }
        IntegralImage { stride, data }
    }

    /// Sum over rows `r..r+h` and columns `c..c+w` (0-based, half-open).
    #[inline]
    fn rect(&self, r: usize, c: usize, h: usize, w: usize) -> f64 {
        let s = self.stride;
        self.data[(r + h) * s + c + w] - self.data[r * s + c + w] - self.data[(r + h) * s + c] + self.data[r * s + c]
    }
}

pub fn block_sums(x: &SensingMatrix, k1: usize, k2: usize) -> Result<BlockSums> {
    let family = BlockFamily::contiguous(x.shape.n1, x.shape.n2, k1, k2)?;
    let dense = x.to_dense();
    let integral = IntegralImage::new(x.shape, &dense);
    let (rows, cols) = family.grid();
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            values.push(integral.rect(r, c, k1, k2));
        }
    }
    Ok(BlockSums { rows, cols, values })
}

/// Least-squares fit of `y ~ mu z`: returns `(f, mu_hat)`.
///
/// A zero `z` fits nothing: `mu_hat = 0` and `f = |y|^2`.
pub fn score(y: &[f64], z: &[f64]) -> Result<(f64, f64)> {
    if y.len() != z.len() {
        return Err(Error::param(format!("score needs equal lengths, got {} and {}", y.len(), z.len())));
    }
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let zy: f64 = z.iter().zip(y).map(|(a, b)| a * b).sum();
    let zz: f64 = z.iter().map(|v| v * v).sum();
    if zz == 0.0 {
        return Ok((yy, 0.0));
    }
    Ok((yy - zy * zy / zz, zy / zz))
}

/// Running accumulators `S1(B) = sum_i z_i(B) y_i`, `S2(B) = sum_i z_i(B)^2`
/// over the block position grid, plus `|y|^2`.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    family: BlockFamily,
    s1: Vec<f64>,
    s2: Vec<f64>,
    y_norm2: f64,
    measurements: usize,
}

impl ScoreTable {
    pub fn new(family: BlockFamily) -> Self {
        let len = family.len();
        ScoreTable {
            family,
            s1: vec![0.0; len],
            s2: vec![0.0; len],
            y_norm2: 0.0,
            measurements: 0,
        }
    }

    pub fn family(&self) -> &BlockFamily {
        &self.family
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    pub fn y_norm2(&self) -> f64 {
        self.y_norm2
    }

    pub fn s1(&self) -> &[f64] {
        &self.s1
    }

    pub fn s2(&self) -> &[f64] {
        &self.s2
    }

    /// Folds one observation `(y, X)` into the accumulators.
    pub fn add(&mut self, y: f64, x: &SensingMatrix) -> Result<()> {
        self.family.shape().check(x.shape)?;
        let (k1, k2) = self.family.block_size();
        let (rows, cols) = self.family.grid();
        let integral = match &x.design {
            crate::measure::Design::Dense { values } => IntegralImage::new(x.shape, values),
            _ => IntegralImage::new(x.shape, &x.to_dense()),
        };
        for r in 0..rows {
            let base = r * cols;
            for c in 0..cols {
                let z = integral.rect(r, c, k1, k2);
                self.s1[base + c] += z * y;
                self.s2[base + c] += z * z;
            }
        }
        self.y_norm2 += y * y;
        self.measurements += 1;
        Ok(())
    }

    /// Explained energy `S1^2 / S2` (zero for a degenerate block).
    fn explained(&self, index: usize) -> f64 {
        let s2 = self.s2[index];
        if s2 > 0.0 {
            self.s1[index] * self.s1[index] / s2
        } else {
            0.0
        }
    }

    pub fn f(&self, index: usize) -> f64 {
        self.y_norm2 - self.explained(index)
    }

    pub fn mu_hat(&self, index: usize) -> f64 {
        let s2 = self.s2[index];
        if s2 > 0.0 {
            self.s1[index] / s2
        } else {
            0.0
        }
    }

    pub fn f_block(&self, block: &Block) -> Option<f64> {
        self.family.index_of(block).map(|i| self.f(i))
    }

    /// Index minimizing `f`; ties go to the smallest `(row_start, col_start)`.
    pub fn argmin(&self) -> usize {
        (0..self.s1.len())
            .into_par_iter()
            .map(|i| (i, self.explained(i)))
            .reduce(
                || (usize::MAX, f64::NEG_INFINITY),
                |a, b| {
                    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                        b
                    } else {
                        a
                    }
                },
            )
            .0
    }

    pub fn best_block(&self) -> Block {
        self.family.get(self.argmin()).unwrap()
    }
}

/// Draws `m` Gaussian designs from `design`, measures `instance` with noise
/// from `noise`, and returns the least-squares block with its score table.
///
/// `m = 1` is accepted but the estimate is essentially arbitrary.
pub fn localize_passive(instance: &SignalInstance, m: usize, design: &RngHandle, noise: &RngHandle) -> Result<(Block, ScoreTable)> {
    if m == 0 {
        return Err(Error::param("passive localization needs m >= 1"));
    }
    let family = BlockFamily::contiguous(instance.n1, instance.n2, instance.k1, instance.k2)?;
    let mut table = ScoreTable::new(family);
    let mut ledger = BudgetLedger::new(m);
    let mut design_rng = design.rng();
    let mut noise_rng = noise.rng();
    for _ in 0..m {
        let x = Arc::new(SensingMatrix::gaussian(instance.shape(), &mut design_rng));
        let rec = measure(instance, Arc::clone(&x), &mut noise_rng, &mut ledger, PhaseTag::Passive)?;
        table.add(rec.y, &x)?;
    }
    Ok((table.best_block(), table))
}

/// Outcome of one passive trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PassiveTrial {
    pub trial: u64,
    pub success: bool,
    pub estimate: Block,
    pub truth: Block,
    pub f_star: f64,
    pub f_best: f64,
}

/// Parameters of a passive experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassiveParams {
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub mu: f64,
    pub sigma: f64,
    pub m: usize,
}

/// One trial on streams `(seed, trial)`: `B*` uniform, fresh designs and noise.
pub fn passive_trial(p: &PassiveParams, seed: u64, trial: u64) -> Result<PassiveTrial> {
    let mut rng = RngHandle::derive(seed, trial, StreamTag::Instance).rng();
    let instance = SignalInstance::sample(p.n1, p.n2, p.k1, p.k2, p.mu, p.sigma, &mut rng)?;
    let (estimate, table) = localize_passive(
        &instance,
        p.m,
        &RngHandle::derive(seed, trial, StreamTag::Design),
        &RngHandle::derive(seed, trial, StreamTag::Noise),
    )?;
    Ok(PassiveTrial {
        trial,
        success: estimate == instance.b_star,
        estimate,
        truth: instance.b_star,
        f_star: table.f_block(&instance.b_star).unwrap(),
        f_best: table.f(table.argmin()),
    })
}

pub fn run_passive_trials(p: &PassiveParams, trials: usize, seed: u64) -> Result<Vec<PassiveTrial>> {
    (0..trials as u64).into_par_iter().map(|t| passive_trial(p, seed, t)).collect()
}

/// Exact-recovery frequency at one SNR, with the rescaled abscissa
/// `sqrt(k m) / n * snr` (square case) used to compare problem sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub snr: f64,
    pub snr_rescaled: f64,
    pub successes: usize,
    pub trials: usize,
}

impl CurvePoint {
    pub fn phat(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Success probability of the least-squares estimator against `mu / sigma`
/// for a square `n x n` matrix with a `k x k` block.
pub fn success_curve(n: usize, k: usize, m: usize, snr_grid: &[f64], trials: usize, seed: u64) -> Result<Vec<CurvePoint>> {
    if trials == 0 {
        return Err(Error::param("trials must be >= 1"));
    }
    snr_grid
        .iter()
        .enumerate()
        .map(|(g, &snr)| {
            let p = PassiveParams {
                n1: n,
                n2: n,
                k1: k,
                k2: k,
                mu: snr,
                sigma: 1.0,
                m,
            };
            let base = (g * trials) as u64;
            let successes = (0..trials as u64)
                .into_par_iter()
                .map(|t| passive_trial(&p, seed, base + t).map(|r| r.success as usize))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum();
            Ok(CurvePoint {
                snr,
                snr_rescaled: snr * ((k * m) as f64).sqrt() / n as f64,
                successes,
                trials,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Shape;
    use proptest::prelude::*;
    use rand::Rng;

    fn naive_sums(x: &SensingMatrix, k1: usize, k2: usize) -> Vec<f64> {
        let (n1, n2) = (x.shape.n1, x.shape.n2);
        let mut out = Vec::new();
        for r in 1..=n1 - k1 + 1 {
            for c in 1..=n2 - k2 + 1 {
                let mut acc = 0.0;
                for i in r..r + k1 {
                    for j in c..c + k2 {
                        acc += x.entry(i, j);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn block_sums_of_constant_matrix() {
        let x = SensingMatrix::all_ones(Shape::new(6, 5).unwrap());
        let z = block_sums(&x, 2, 3).unwrap();
        assert_eq!((z.rows, z.cols), (5, 3));
        let want = 6.0 / 30f64.sqrt();
        assert!(z.values.iter().all(|v| (v - want).abs() < 1e-14));
    }

    #[test]
    fn block_sums_of_corner_indicator() {
        let s = Shape::new(5, 5).unwrap();
        let mut values = vec![0.0; 25];
        values[0] = 1.0;
        let x = SensingMatrix::dense(s, values).unwrap();
        let z = block_sums(&x, 2, 2).unwrap();
        assert_eq!(z.at(1, 1), 1.0);
        assert_eq!(z.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn block_sums_match_naive_loop() {
        let mut rng = RngHandle::new(12, 0).rng();
        let s = Shape::new(8, 8).unwrap();
        let values: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0) / 8.0).collect();
        let x = SensingMatrix::dense(s, values).unwrap();
        let fast = block_sums(&x, 3, 3).unwrap();
        for (a, b) in fast.values.iter().zip(naive_sums(&x, 3, 3)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn score_hand_values() {
        let (f, mu) = score(&[2.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((mu - 1.0).abs() < 1e-15 && (f - 2.0).abs() < 1e-15);
        assert_eq!(score(&[0.0, 0.0, 0.0], &[1.0, -2.0, 0.5]).unwrap(), (0.0, 0.0));
        let z = [0.3, -1.2, 2.0];
        let y: Vec<f64> = z.iter().map(|v| -1.7 * v).collect();
        let (f, mu) = score(&y, &z).unwrap();
        assert!(f.abs() < 1e-14 && (mu + 1.7).abs() < 1e-14);
        assert_eq!(score(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), (5.0, 0.0));
        assert!(score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn noiseless_recovery() {
        let mut hits = 0;
        for t in 0..100 {
            let mut rng = RngHandle::derive(31, t, StreamTag::Instance).rng();
            let inst = SignalInstance::sample(16, 16, 4, 4, 1.0, 1e-12, &mut rng).unwrap();
            let (b, table) = localize_passive(
                &inst,
                5,
                &RngHandle::derive(31, t, StreamTag::Design),
                &RngHandle::derive(31, t, StreamTag::Noise),
            )
            .unwrap();
            hits += (b == inst.b_star) as usize;
            assert!(table.f_block(&inst.b_star).unwrap() <= 1e-12 * table.y_norm2());
            assert!((table.mu_hat(table.family().index_of(&inst.b_star).unwrap()) - 1.0).abs() < 1e-6);
        }
        assert!(hits >= 99, "{hits}/100");
    }

    #[test]
    fn single_measurement_is_well_defined() {
        let inst = SignalInstance::new(6, 6, 1.0, 1.0, Block::new(2, 2, 2, 2)).unwrap();
        let (b, table) = localize_passive(&inst, 1, &RngHandle::new(0, 1), &RngHandle::new(0, 2)).unwrap();
        assert!(b.fits(inst.shape()));
        assert_eq!(table.measurements(), 1);
        assert!(localize_passive(&inst, 0, &RngHandle::new(0, 1), &RngHandle::new(0, 2)).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let family = BlockFamily::contiguous(4, 4, 2, 2).unwrap();
        let table = ScoreTable::new(family);
        assert_eq!(table.argmin(), 0);
        assert_eq!(table.best_block(), Block::new(1, 1, 2, 2));
    }

    #[test]
    fn argmin_invariant_to_scaling_y() {
        let inst = SignalInstance::new(10, 9, 0.4, 1.0, Block::new(3, 4, 3, 2)).unwrap();
        let mut rng = RngHandle::new(6, 6).rng();
        let family = BlockFamily::contiguous(10, 9, 3, 2).unwrap();
        let mut a = ScoreTable::new(family.clone());
        let mut b = ScoreTable::new(family);
        let mut ledger = BudgetLedger::new(12);
        for _ in 0..12 {
            let x = Arc::new(SensingMatrix::gaussian(inst.shape(), &mut rng));
            let y = measure(&inst, x.clone(), &mut rng, &mut ledger, PhaseTag::Passive).unwrap().y;
            a.add(y, &x).unwrap();
            b.add(3.5 * y, &x).unwrap();
        }
        assert_eq!(a.argmin(), b.argmin());
        let i = a.argmin();
        assert!((b.f(i) - 3.5 * 3.5 * a.f(i)).abs() <= 1e-9 * b.f(i).abs());
    }

    #[test]
    fn guessing_floor_at_zero_snr() {
        let curve = success_curve(8, 2, 10, &[0.0], 2000, 4).unwrap();
        let floor: f64 = 1.0 / 49.0;
        let se = (floor * (1.0 - floor) / 2000.0).sqrt();
        assert!((curve[0].phat() - floor).abs() <= 4.0 * se, "{}", curve[0].phat());
        assert_eq!(curve[0].snr_rescaled, 0.0);
    }

    #[test]
    fn curve_is_monotone_in_snr() {
        let grid = [0.5, 1.0, 2.0, 3.0, 4.0];
        let curve = success_curve(12, 3, 40, &grid, 200, 9).unwrap();
        for w in curve.windows(2) {
            let se = (w[0].phat() * (1.0 - w[0].phat()) / 200.0)
                .sqrt()
                .max((w[1].phat() * (1.0 - w[1].phat()) / 200.0).sqrt());
            assert!(w[1].phat() + 3.0 * se + 1e-12 >= w[0].phat(), "{curve:?}");
        }
        assert!((curve[1].snr_rescaled - (120f64).sqrt() / 12.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prefix_sums_equal_naive(
            n1 in 1usize..10, n2 in 1usize..10, k1 in 1usize..10, k2 in 1usize..10, seed in any::<u64>()
        ) {
            let (k1, k2) = (k1.min(n1), k2.min(n2));
            let mut rng = RngHandle::new(seed, 0).rng();
            let s = Shape::new(n1, n2).unwrap();
            let values: Vec<f64> = (0..n1 * n2).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let x = SensingMatrix { shape: s, design: crate::measure::Design::Dense { values } };
            let fast = block_sums(&x, k1, k2).unwrap();
            for (a, b) in fast.values.iter().zip(naive_sums(&x, k1, k2)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
