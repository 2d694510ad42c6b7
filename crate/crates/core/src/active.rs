//! Adaptive localization.
//!
//! The procedure runs in two phases on a matrix padded so that each axis
//! holds a power-of-two number of `2k` tiles:
//!
//! 1. Approximate: compressive binary search over each of four `2k1 x 2k2`
//!    tilings of the torus (unshifted, shifted by `k1` rows and/or `k2`
//!    columns). Every contiguous `k1 x k2` block lies inside some tile of some
//!    tiling, so the union of the four winning tiles covers the true block
//!    when the search on its tiling succeeds.
//! 2. Exact: inside that union, scan a lattice of columns spaced `k2` apart
//!    (exactly one of them is active), then binary-search for the last active
//!    column to the right. The same is repeated for rows.
//!
//! With unit budget `m`, the phases are charged against fixed allocations:
//! `4m` for the four searches, `16m` for the two lattice scans and `2m` for
//! the two halving searches, `22m` in total.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{Account, BudgetLedger, Channel, LiveChannel, PhaseTag, SensingMatrix, Stage};
use crate::model::{Block, RngHandle, Shape, SignalInstance, StreamTag};

/// Budget units in the full schedule.
pub const SCHEDULE_UNITS: usize = 22;
pub const CBS_UNITS: usize = 4;
pub const SCAN_UNITS: usize = 16;
pub const SEARCH_UNITS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Tiling {
    /// No shift.
    D1,
    /// Shifted by `k1` rows and `k2` columns.
    D2,
    /// Shifted by `k1` rows.
    D3,
    /// Shifted by `k2` columns.
    D4,
}

impl Tiling {
    pub const ALL: [Tiling; 4] = [Tiling::D1, Tiling::D2, Tiling::D3, Tiling::D4];

    /// `(row shift, column shift)` in units of `(k1, k2)`.
    fn shifts(self) -> (usize, usize) {
        match self {
            Tiling::D1 => (0, 0),
            Tiling::D2 => (1, 1),
            Tiling::D3 => (1, 0),
            Tiling::D4 => (0, 1),
        }
    }
}

/// `p` disjoint `2k1 x 2k2` tiles covering the torus, ordered with the row
/// tile index varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCollection {
    pub label: Tiling,
    pub shape: Shape,
    pub row_shift: usize,
    pub col_shift: usize,
    pub blocks: Vec<Block>,
}

impl BlockCollection {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Number of halving levels, `log2 p`.
    pub fn levels(&self) -> u32 {
        self.blocks.len().trailing_zeros()
    }

    pub fn covering(&self, inner: &Block) -> Option<&Block> {
        self.blocks.iter().find(|b| b.covers(inner))
    }
}

fn padded_axis(n: usize, k: usize) -> usize {
    2 * k * n.div_ceil(2 * k).next_power_of_two()
}

/// Smallest shape containing `n1 x n2` whose axes are `2k` times a power of two.
pub fn padded_shape(n1: usize, n2: usize, k1: usize, k2: usize) -> Result<Shape> {
    let shape = Shape::new(n1, n2)?;
    if k1 == 0 || k2 == 0 || k1 > n1 || k2 > n2 {
        return Err(Error::param(format!("block {k1}x{k2} does not fit in {n1}x{n2}")));
    }
    Shape::new(padded_axis(shape.n1, k1), padded_axis(shape.n2, k2))
}

/// The four tilings of an `n1 x n2` torus. Each axis must already be `2k`
/// times a power of two; see [`padded_shape`].
pub fn build_collections(n1: usize, n2: usize, k1: usize, k2: usize) -> Result<[BlockCollection; 4]> {
    let shape = Shape::new(n1, n2)?;
    if k1 == 0 || k2 == 0 || !n1.is_multiple_of(2 * k1) || !n2.is_multiple_of(2 * k2) {
        return Err(Error::param(format!(
            "{n1}x{n2} is not a multiple of the {}x{} tile",
            2 * k1,
            2 * k2
        )));
    }
    let (rt, ct) = (n1 / (2 * k1), n2 / (2 * k2));
    if !(rt * ct).is_power_of_two() {
        return Err(Error::param(format!("{} tiles is not a power of two", rt * ct)));
    }
    Ok(Tiling::ALL.map(|label| {
        let (sr, sc) = label.shifts();
        let (row_shift, col_shift) = (sr * k1, sc * k2);
        let blocks = (0..rt * ct)
            .map(|i| {
                let (a, b) = (i % rt, i / rt);
                Block::on_torus(shape, row_shift + 2 * k1 * a + 1, col_shift + 2 * k2 * b + 1, 2 * k1, 2 * k2)
            })
            .collect();
        BlockCollection {
            label,
            shape,
            row_shift,
            col_shift,
            blocks,
        }
    }))
}

/// Per-level budgets `m_s = floor((m - s0) s 2^{-s-1}) + 1`, `s = 1..=s0`.
pub fn cbs_allocation(m: usize, s0: u32) -> Vec<usize> {
    let spare = m.saturating_sub(s0 as usize) as f64;
    (1..=s0)
        .map(|s| (spare * s as f64 * 0.5f64.powi(s as i32 + 1)).floor() as usize + 1)
        .collect()
}

/// Compressive binary search over `collection` with budget `m`.
///
/// At level `s` the surviving tiles are split into halves; one design puts
/// `+v` on the first half and `-v` on the second, with `v` giving unit
/// energy. The half with positive measurement sum survives.
pub fn cbs_run(channel: &mut impl Channel, collection: &BlockCollection, m: usize) -> Result<Block> {
    channel.shape().check(collection.shape)?;
    let s0 = collection.levels();
    if !collection.len().is_power_of_two() {
        return Err(Error::param("collection size must be a power of two"));
    }
    if m < 2 * s0 as usize {
        return Err(Error::param(format!(
            "binary search over {} tiles needs m >= {}, got {m}",
            collection.len(),
            2 * s0
        )));
    }
    let alloc = cbs_allocation(m, s0);
    let (mut lo, mut hi) = (0, collection.len());
    for (s, &m_s) in (1..=s0).zip(&alloc) {
        let mid = lo + (hi - lo) / 2;
        let x = Arc::new(SensingMatrix::signed_blocks(
            collection.shape,
            &collection.blocks[lo..mid],
            &collection.blocks[mid..hi],
        )?);
        let sum = channel.measure_sum(&x, PhaseTag::Cbs(s), m_s)?;
        if sum > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    debug_assert_eq!(hi - lo, 1);
    Ok(collection.blocks[lo])
}

/// Indices `1..=n` covered by `blocks` along one axis, listed in torus order
/// starting just after the longest uncovered run. Any contiguous interval
/// inside the cover stays contiguous in this list.
fn ordered_cover(n: usize, spans: &[Vec<usize>]) -> Vec<usize> {
    let mut covered = vec![false; n];
    for span in spans {
        for &i in span {
            covered[i - 1] = true;
        }
    }
    if covered.iter().all(|&c| c) {
        return (1..=n).collect();
    }
    // start after the longest run of uncovered indices (first one on ties)
    let (mut best_len, mut best_end) = (0, 0);
    for start in 0..n {
        if covered[start] || !covered[(start + n - 1) % n] {
            continue;
        }
        let len = (1..n).take_while(|d| !covered[(start + d) % n]).count() + 1;
        if len > best_len {
            best_len = len;
            best_end = (start + len) % n;
        }
    }
    (0..n).map(|d| (best_end + d) % n).filter(|&i| covered[i]).map(|i| i + 1).collect()
}

/// Rows and columns to search during exact localization, each listed so
/// that the true block's rows (columns) form one contiguous run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Region {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Region {
    pub fn covers(&self, block: &Block) -> bool {
        block.rows().all(|i| self.rows.contains(&i)) && block.cols().all(|j| self.cols.contains(&j))
    }

    pub fn transpose(&self) -> Region {
        Region {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
        }
    }

    /// Union of the rows and columns of `blocks` on a torus of `shape`.
    pub fn union(shape: Shape, blocks: &[Block]) -> Region {
        let rows: Vec<Vec<usize>> = blocks.iter().map(|b| b.rows().collect()).collect();
        let cols: Vec<Vec<usize>> = blocks.iter().map(|b| b.cols().collect()).collect();
        Region {
            rows: ordered_cover(shape.n1, &rows),
            cols: ordered_cover(shape.n2, &cols),
        }
    }
}

/// Runs the binary search on all four tilings with `m_unit` each and
/// returns the union of the winners (at most `8k1 x 8k2`).
pub fn approx_localize(channel: &mut impl Channel, collections: &[BlockCollection; 4], m_unit: usize) -> Result<(Region, [Block; 4])> {
    let mut winners = [collections[0].blocks[0]; 4];
    for (w, c) in winners.iter_mut().zip(collections) {
        *w = cbs_run(channel, c, m_unit)?;
    }
    Ok((Region::union(channel.shape(), &winners), winners))
}

/// Parameterization of exact localization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
pub enum Variant {
    /// Per-line budgets and thresholds from the explicit-constant analysis:
    /// `8m` shared by the lattice lines, `m / (3 ln k)` per halving test,
    /// threshold `sigma sqrt(2 m_b ln(3 log2(k) / delta))`.
    #[default]
    Proof,
    /// The algorithm box: `m/5` per lattice line (per-axis budget `9m`),
    /// `m / (6 log2 k)` per halving test, union-bound threshold over
    /// `ceil(log2 k)` tests. Budgets are capped to fit the same schedule.
    Box,
}

#[derive(Clone, Copy, Debug)]
enum Axis {
    Rows,
    Cols,
}

/// Budgets and threshold used by one exact-localization pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactPlan {
    pub candidates: usize,
    pub per_candidate: usize,
    pub per_test: usize,
    pub threshold: f64,
}

impl ExactPlan {
    pub fn new(len: usize, k: usize, m_unit: usize, sigma: f64, delta: f64, variant: Variant) -> Self {
        let candidates = len.div_ceil(k);
        let scan_budget = SCAN_UNITS / 2 * m_unit;
        let mut per_candidate = scan_budget / candidates;
        let (per_test, threshold) = if k < 2 {
            (0, 0.0)
        } else {
            let lk = (k as f64).log2();
            let tests = lk.ceil();
            match variant {
                Variant::Proof => {
                    let per_test = ((m_unit as f64 / (3.0 * (k as f64).ln())).floor() as usize).max(1);
                    let t = (2.0 * per_test as f64 * (3.0 * lk / delta).ln()).max(0.0).sqrt();
                    (per_test, sigma * t)
                }
                Variant::Box => {
                    let axis_budget = (SCAN_UNITS + SEARCH_UNITS) / 2 * m_unit;
                    per_candidate = per_candidate.min(axis_budget / 5);
                    let per_test = ((axis_budget as f64 / (6.0 * lk)).floor() as usize)
                        .min(m_unit / tests as usize)
                        .max(1);
                    let t = (2.0 * per_test as f64 * (tests / delta).ln()).max(0.0).sqrt();
                    (per_test, sigma * t)
                }
            }
        };
        ExactPlan {
            candidates,
            per_candidate,
            per_test,
            threshold,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn exact_axis(
    channel: &mut impl Channel,
    axis: Axis,
    along: &[usize],
    across: &[usize],
    k: usize,
    m_unit: usize,
    delta: f64,
    variant: Variant,
) -> Result<Vec<usize>> {
    if along.len() < k || across.is_empty() {
        return Err(Error::param(format!(
            "search region of length {} cannot hold a window of {k}",
            along.len()
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta = {delta} must lie in (0, 1)")));
    }
    let shape = channel.shape();
    let plan = ExactPlan::new(along.len(), k, m_unit, channel.sigma(), delta, variant);
    let design = |pos: usize| -> Result<Arc<SensingMatrix>> {
        Ok(Arc::new(match axis {
            Axis::Cols => SensingMatrix::column(shape, across.to_vec(), along[pos])?,
            Axis::Rows => SensingMatrix::row(shape, across.to_vec(), along[pos])?,
        }))
    };
    let tag = |stage| match axis {
        Axis::Cols => PhaseTag::ExactCol(stage),
        Axis::Rows => PhaseTag::ExactRow(stage),
    };

    // lattice scan: exactly one of positions 0, k, 2k, ... is active
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..plan.candidates {
        let sum = channel.measure_sum(&design(j * k)?, tag(Stage::Scan), plan.per_candidate)?;
        if sum > best.1 {
            best = (j * k, sum);
        }
    }
    let mut left = best.0;

    // halving search for the last active position in [left, left + k)
    if k >= 2 {
        let mut right = left + k;
        while right - left > 1 {
            let mid = (left + right) / 2;
            let active = mid < along.len() && channel.measure_sum(&design(mid)?, tag(Stage::Search), plan.per_test)? >= plan.threshold;
            if active {
                left = mid;
            } else {
                right = mid;
            }
        }
    }
    let first = (left + 1).saturating_sub(k);
    Ok((first..first + k).map(|p| along[p.min(along.len() - 1)]).collect())
}

/// Finds the `k2` active columns inside `region`; returns absolute column
/// indices in region order.
pub fn exact_localize_columns(
    channel: &mut impl Channel,
    region: &Region,
    k2: usize,
    m_unit: usize,
    delta: f64,
    variant: Variant,
) -> Result<Vec<usize>> {
    exact_axis(channel, Axis::Cols, &region.cols, &region.rows, k2, m_unit, delta, variant)
}

/// Row counterpart of [`exact_localize_columns`].
pub fn exact_localize_rows(
    channel: &mut impl Channel,
    region: &Region,
    k1: usize,
    m_unit: usize,
    delta: f64,
    variant: Variant,
) -> Result<Vec<usize>> {
    exact_axis(channel, Axis::Rows, &region.rows, &region.cols, k1, m_unit, delta, variant)
}

/// Smallest total budget accepted for an `n1 x n2` problem:
/// `22 max(3 ln(n1 n2), 2 log2 p)`.
pub fn min_budget(n1: usize, n2: usize, k1: usize, k2: usize) -> Result<f64> {
    let padded = padded_shape(n1, n2, k1, k2)?;
    let p = padded.cells() / (4 * k1 * k2);
    let s0 = p.trailing_zeros() as f64;
    Ok(SCHEDULE_UNITS as f64 * (3.0 * ((n1 * n2) as f64).ln()).max(2.0 * s0))
}

/// Ledger for total budget `budget` with the `4m / 16m / 2m` allocations.
pub fn schedule_ledger(budget: usize) -> BudgetLedger {
    let m = budget / SCHEDULE_UNITS;
    BudgetLedger::new(budget)
        .with_cap(Account::Cbs, CBS_UNITS * m)
        .with_cap(Account::Scan, SCAN_UNITS * m)
        .with_cap(Account::Search, SEARCH_UNITS * m)
}

/// Everything decided during one adaptive run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActiveRun {
    pub estimate: Block,
    pub tiles: [Block; 4],
    pub region: Region,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub unit: usize,
}

/// Runs the full adaptive procedure against `channel`, whose shape is the
/// padded torus. `k1, k2` are the known block dimensions.
pub fn localize_on(channel: &mut impl Channel, k1: usize, k2: usize, budget: usize, delta: f64, variant: Variant) -> Result<ActiveRun> {
    let shape = channel.shape();
    let collections = build_collections(shape.n1, shape.n2, k1, k2)?;
    let unit = budget / SCHEDULE_UNITS;
    let (region, tiles) = approx_localize(channel, &collections, unit)?;
    let cols = exact_localize_columns(channel, &region, k2, unit, delta, variant)?;
    let rows = exact_localize_rows(channel, &region, k1, unit, delta, variant)?;
    let estimate = Block::on_torus(shape, rows[0], cols[0], k1, k2);
    Ok(ActiveRun {
        estimate,
        tiles,
        region,
        rows,
        cols,
        unit,
    })
}

/// Result of [`localize_active`], with the budget audit.
#[derive(Clone, Debug)]
pub struct ActiveOutcome {
    pub run: ActiveRun,
    pub ledger: BudgetLedger,
}

impl ActiveOutcome {
    pub fn estimate(&self) -> Block {
        self.run.estimate
    }
}

fn check_active(instance: &SignalInstance, budget: usize, delta: f64) -> Result<Shape> {
    let need = min_budget(instance.n1, instance.n2, instance.k1, instance.k2)?;
    if (budget as f64) < need {
        return Err(Error::param(format!("budget {budget} below the required {need:.1}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta = {delta} must lie in (0, 1)")));
    }
    padded_shape(instance.n1, instance.n2, instance.k1, instance.k2)
}

/// Adaptive localization of `instance.b_star` with total budget `budget`
/// (unit `m = budget / 22`), noise drawn from `noise`.
pub fn localize_active(instance: &SignalInstance, budget: usize, delta: f64, variant: Variant, noise: &RngHandle) -> Result<ActiveOutcome> {
    let padded = check_active(instance, budget, delta)?;
    let view = instance.padded(padded.n1, padded.n2)?;
    let mut channel = LiveChannel::new(&view, noise.rng(), schedule_ledger(budget));
    let run = localize_on(&mut channel, instance.k1, instance.k2, budget, delta, variant)?;
    let (ledger, _) = channel.into_parts();
    Ok(ActiveOutcome { run, ledger })
}

/// As [`localize_active`] but also returns every measurement taken.
pub fn localize_active_recorded(
    instance: &SignalInstance,
    budget: usize,
    delta: f64,
    variant: Variant,
    noise: &RngHandle,
) -> Result<(ActiveOutcome, Vec<crate::measure::MeasurementRecord>)> {
    let padded = check_active(instance, budget, delta)?;
    let view = instance.padded(padded.n1, padded.n2)?;
    let mut channel = LiveChannel::new(&view, noise.rng(), schedule_ledger(budget)).recording();
    let run = localize_on(&mut channel, instance.k1, instance.k2, budget, delta, variant)?;
    let (ledger, records) = channel.into_parts();
    Ok((ActiveOutcome { run, ledger }, records.unwrap_or_default()))
}

/// Parameters of an adaptive experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveParams {
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub mu: f64,
    pub sigma: f64,
    pub budget: usize,
    pub delta: f64,
    pub variant: Variant,
}

/// One trial with budget audit figures.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActiveTrial {
    pub trial: u64,
    pub success: bool,
    pub estimate: Block,
    pub truth: Block,
    pub unit: usize,
    pub spent_total: usize,
    pub spent_cbs: usize,
    pub spent_scan: usize,
    pub spent_search: usize,
    pub cap_cbs: usize,
    pub cap_scan: usize,
    pub cap_search: usize,
}

pub fn active_trial(p: &ActiveParams, seed: u64, trial: u64) -> Result<ActiveTrial> {
    let mut rng = RngHandle::derive(seed, trial, StreamTag::Instance).rng();
    let instance = SignalInstance::sample(p.n1, p.n2, p.k1, p.k2, p.mu, p.sigma, &mut rng)?;
    let out = localize_active(
        &instance,
        p.budget,
        p.delta,
        p.variant,
        &RngHandle::derive(seed, trial, StreamTag::Noise),
    )?;
    let l = &out.ledger;
    Ok(ActiveTrial {
        trial,
        success: out.estimate() == instance.b_star,
        estimate: out.estimate(),
        truth: instance.b_star,
        unit: out.run.unit,
        spent_total: l.total_spent(),
        spent_cbs: l.spent_in(Account::Cbs),
        spent_scan: l.spent_in(Account::Scan),
        spent_search: l.spent_in(Account::Search),
        cap_cbs: l.cap(Account::Cbs).unwrap_or(0),
        cap_scan: l.cap(Account::Scan).unwrap_or(0),
        cap_search: l.cap(Account::Search).unwrap_or(0),
    })
}

pub fn run_active_trials(p: &ActiveParams, trials: usize, seed: u64) -> Result<Vec<ActiveTrial>> {
    (0..trials as u64).into_par_iter().map(|t| active_trial(p, seed, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{ReplayChannel, ENERGY_TOL};
    use crate::model::enumerate_blocks;

    fn live<'a>(inst: &'a SignalInstance, seed: u64, budget: usize) -> LiveChannel<'a> {
        LiveChannel::new(inst, RngHandle::new(seed, 0).rng(), BudgetLedger::new(budget))
    }

    #[test]
    fn padding_rounds_to_dyadic_tiles() {
        assert_eq!(padded_shape(64, 64, 4, 4).unwrap(), Shape::new(64, 64).unwrap());
        assert_eq!(padded_shape(36, 36, 6, 6).unwrap(), Shape::new(48, 48).unwrap());
        assert_eq!(padded_shape(16, 30, 4, 3).unwrap(), Shape::new(16, 48).unwrap());
        assert_eq!(padded_shape(5, 5, 4, 4).unwrap(), Shape::new(8, 8).unwrap());
        assert!(padded_shape(5, 5, 6, 1).is_err());
    }

    #[test]
    fn collections_for_8x8() {
        let cs = build_collections(8, 8, 2, 2).unwrap();
        for c in &cs {
            assert_eq!(c.len(), 4);
            assert!(c.blocks.iter().all(|b| b.height == 4 && b.width == 4));
            // the tiles partition the torus
            let mut seen = vec![0; 64];
            for b in &c.blocks {
                for (i, j) in b.cells() {
                    seen[(i - 1) * 8 + j - 1] += 1;
                }
            }
            assert!(seen.iter().all(|&s| s == 1), "{:?}", c.label);
        }
        assert_eq!(cs[0].blocks[1], Block::new(5, 1, 4, 4));
        assert!(cs[0].blocks.iter().all(|b| !b.wraps()));
        assert!(build_collections(12, 8, 2, 2).is_err());
        assert!(build_collections(10, 8, 2, 2).is_err());
    }

    #[test]
    fn last_shifted_tile_wraps_both_axes() {
        let (n, k) = (16, 2);
        let cs = build_collections(n, n, k, k).unwrap();
        let last = cs[1].blocks.last().unwrap();
        assert!(last.wraps());
        let rows: Vec<_> = last.rows().collect();
        let cols: Vec<_> = last.cols().collect();
        assert_eq!(rows, vec![15, 16, 1, 2]);
        assert_eq!(cols, vec![15, 16, 1, 2]);
        assert_eq!(cs[2].blocks.last().unwrap().cols().collect::<Vec<_>>(), vec![13, 14, 15, 16]);
        assert_eq!(cs[3].blocks.last().unwrap().rows().collect::<Vec<_>>(), vec![13, 14, 15, 16]);
    }

    #[test]
    fn every_block_is_covered_by_some_tiling() {
        // a k-window sits inside an unshifted 2k tile iff its offset mod 2k is
        // in [0, k], and inside a shifted tile iff that offset is 0 or in [k, 2k);
        // so each axis admits 1 or 2 tilings and the count is their product.
        let (n, k) = (16, 2);
        let cs = build_collections(n, n, k, k).unwrap();
        let axis_count = |start: usize| {
            let t = (start - 1) % (2 * k);
            (t <= k) as usize + (t == 0 || t >= k) as usize
        };
        for b in enumerate_blocks(n, n, k, k).unwrap().iter() {
            let hits = cs.iter().filter(|c| c.covering(&b).is_some()).count();
            assert!(hits >= 1);
            assert_eq!(hits, axis_count(b.row_start) * axis_count(b.col_start), "{b:?}");
        }
    }

    #[test]
    fn allocation_example() {
        assert_eq!(cbs_allocation(100, 4), vec![25, 25, 19, 13]);
        assert_eq!(cbs_allocation(100, 4).iter().sum::<usize>(), 82);
        assert_eq!(cbs_allocation(25, 6), vec![5, 5, 4, 3, 2, 1]);
    }

    #[test]
    fn allocation_never_exceeds_budget() {
        for s0 in 0..=20u32 {
            for m in (2 * s0 as usize)..=10_000 {
                let alloc = cbs_allocation(m, s0);
                assert!(alloc.iter().sum::<usize>() <= m, "m={m} s0={s0}");
            }
        }
    }

    #[test]
    fn cbs_designs_have_unit_energy() {
        let cs = build_collections(32, 32, 2, 2).unwrap();
        let inst = SignalInstance::new(32, 32, 1.0, 1.0, Block::new(3, 3, 2, 2)).unwrap();
        let mut ch = live(&inst, 1, 1000).recording();
        cbs_run(&mut ch, &cs[1], 100).unwrap();
        let (_, recs) = ch.into_parts();
        let recs = recs.unwrap();
        assert!(!recs.is_empty());
        for r in &recs {
            assert!((r.x.frobenius_norm() - 1.0).abs() <= ENERGY_TOL);
        }
    }

    #[test]
    fn cbs_noiseless_finds_containing_tile() {
        let (n, k) = (32, 4);
        let cs = build_collections(n, n, k, k).unwrap();
        for t in 0..100 {
            let mut rng = RngHandle::new(t, 1).rng();
            let inst = SignalInstance::sample(n, n, k, k, 1.0, 1e-12, &mut rng).unwrap();
            let c = cs.iter().find(|c| c.covering(&inst.b_star).is_some()).unwrap();
            let mut ch = live(&inst, t, 100);
            let won = cbs_run(&mut ch, c, 100).unwrap();
            assert!(won.covers(&inst.b_star));
        }
    }

    #[test]
    fn cbs_rejects_small_budget() {
        let cs = build_collections(32, 32, 2, 2).unwrap();
        let inst = SignalInstance::new(32, 32, 1.0, 1.0, Block::new(3, 3, 2, 2)).unwrap();
        let mut ch = live(&inst, 1, 1000);
        assert!(cbs_run(&mut ch, &cs[0], 11).is_err());
        assert!(cbs_run(&mut ch, &cs[0], 12).is_ok());
    }

    #[test]
    fn cover_order_keeps_windows_contiguous() {
        let spans = vec![vec![15, 16, 1, 2], vec![9, 10, 11, 12]];
        assert_eq!(ordered_cover(16, &spans), vec![9, 10, 11, 12, 15, 16, 1, 2]);
        let spans = vec![vec![3, 4, 5, 6], vec![5, 6, 7, 8], vec![1, 2, 3, 4]];
        assert_eq!(ordered_cover(10, &spans), (1..=8).collect::<Vec<_>>());
        assert_eq!(ordered_cover(4, &[vec![1, 2], vec![3, 4]]), vec![1, 2, 3, 4]);
    }

    #[test]
    fn approx_region_noiseless_covers_truth() {
        let (n, k) = (64, 4);
        let cs = build_collections(n, n, k, k).unwrap();
        for t in 0..50 {
            let inst = SignalInstance::sample(n, n, k, k, 1.0, 1e-12, &mut RngHandle::new(t, 5).rng()).unwrap();
            let mut ch = live(&inst, t, 400);
            let (region, _) = approx_localize(&mut ch, &cs, 100).unwrap();
            assert!(region.covers(&inst.b_star));
            assert!(region.rows.len() <= 8 * k && region.cols.len() <= 8 * k);
        }
    }

    #[test]
    fn exact_columns_noiseless() {
        let (n, k) = (64, 4);
        for t in 0..100 {
            let inst = SignalInstance::sample(n, n, k, k, 1.0, 1e-12, &mut RngHandle::new(t, 8).rng()).unwrap();
            // an 8k-wide region around the truth
            let c0 = inst.b_star.col_start.saturating_sub(t as usize % (4 * k)).max(1).min(n - 8 * k + 1);
            let r0 = inst.b_star.row_start.saturating_sub(3).max(1).min(n - 8 * k + 1);
            let region = Region {
                rows: (r0..r0 + 8 * k).collect(),
                cols: (c0..c0 + 8 * k).collect(),
            };
            assert!(region.covers(&inst.b_star));
            let mut ch = live(&inst, t, 10_000);
            let cols = exact_localize_columns(&mut ch, &region, k, 50, 0.01, Variant::Proof).unwrap();
            let want: Vec<usize> = inst.b_star.cols().collect();
            assert_eq!(cols, want);
        }
    }

    #[test]
    fn width_one_skips_search() {
        let inst = SignalInstance::new(32, 32, 1.0, 1e-12, Block::new(7, 9, 3, 1)).unwrap();
        let region = Region {
            rows: (1..=16).collect(),
            cols: (5..=12).collect(),
        };
        let mut ch = live(&inst, 0, 10_000);
        let cols = exact_localize_columns(&mut ch, &region, 1, 10, 0.1, Variant::Proof).unwrap();
        assert_eq!(cols, vec![9]);
        assert_eq!(ch.ledger().spent_in(Account::Search), 0);
        assert_eq!(ch.ledger().spent_in(Account::Scan), 80);
    }

    #[test]
    fn rows_mirror_columns_under_transpose() {
        let (n, k) = (64, 4);
        let mut agree = 0;
        for t in 0..40 {
            let inst = SignalInstance::sample(n, n, k, k, 0.6, 1.0, &mut RngHandle::new(t, 2).rng()).unwrap();
            let region = Region {
                rows: (inst.b_star.row_start.min(n - 31)..).take(32).collect(),
                cols: (inst.b_star.col_start.saturating_sub(5).max(1).min(n - 31)..).take(32).collect(),
            };
            let tr = inst.transpose();
            let mut a = live(&inst, 100 + t, 10_000);
            let rows = exact_localize_rows(&mut a, &region, k, 40, 0.1, Variant::Proof).unwrap();
            let mut b = live(&tr, 100 + t, 10_000);
            let cols = exact_localize_columns(&mut b, &region.transpose(), k, 40, 0.1, Variant::Proof).unwrap();
            assert_eq!(rows, cols);
            agree += (rows == inst.b_star.rows().collect::<Vec<_>>()) as usize;
        }
        assert!(agree > 0);
    }

    #[test]
    fn noiseless_full_recovery_and_schedule() {
        let (n, k) = (64, 4);
        let budget = 22 * (3.0 * 4096f64.ln()).ceil() as usize;
        assert_eq!(budget, 550);
        for t in 0..100 {
            let inst = SignalInstance::sample(n, n, k, k, 1.0, 1e-12, &mut RngHandle::new(t, 3).rng()).unwrap();
            let out = localize_active(&inst, budget, 0.01, Variant::Proof, &RngHandle::new(t, 4)).unwrap();
            assert_eq!(out.estimate(), inst.b_star, "trial {t}");
            let l = &out.ledger;
            assert_eq!(l.cap(Account::Cbs), Some(100));
            assert_eq!(l.cap(Account::Scan), Some(400));
            assert_eq!(l.cap(Account::Search), Some(50));
            assert!(l.total_spent() <= budget);
            assert!(l.spent_in(Account::Cbs) <= 100 && l.spent_in(Account::Scan) <= 400 && l.spent_in(Account::Search) <= 50);
        }
    }

    #[test]
    fn transpose_invariance_noiseless() {
        for t in 0..20 {
            let inst = SignalInstance::sample(32, 48, 4, 2, 1.0, 1e-12, &mut RngHandle::new(t, 3).rng()).unwrap();
            let budget = min_budget(32, 48, 4, 2).unwrap().ceil() as usize;
            let a = localize_active(&inst, budget, 0.01, Variant::Proof, &RngHandle::new(t, 4)).unwrap();
            let b = localize_active(&inst.transpose(), budget, 0.01, Variant::Proof, &RngHandle::new(t, 4)).unwrap();
            assert_eq!(a.estimate().transpose(), b.estimate());
            assert_eq!(a.estimate(), inst.b_star);
        }
    }

    #[test]
    fn non_dyadic_shapes_are_padded() {
        for t in 0..20 {
            let inst = SignalInstance::sample(36, 20, 6, 3, 1.0, 1e-12, &mut RngHandle::new(t, 6).rng()).unwrap();
            let budget = min_budget(36, 20, 6, 3).unwrap().ceil() as usize;
            let out = localize_active(&inst, budget, 0.01, Variant::Proof, &RngHandle::new(t, 7)).unwrap();
            assert_eq!(out.estimate(), inst.b_star);
        }
    }

    #[test]
    fn box_variant_noiseless() {
        for t in 0..20 {
            let inst = SignalInstance::sample(64, 64, 4, 4, 1.0, 1e-12, &mut RngHandle::new(t, 9).rng()).unwrap();
            let out = localize_active(&inst, 22 * 60, 0.01, Variant::Box, &RngHandle::new(t, 10)).unwrap();
            assert_eq!(out.estimate(), inst.b_star);
            assert!(out.ledger.total_spent() <= 22 * 60);
        }
    }

    #[test]
    fn insufficient_budget_is_rejected() {
        let inst = SignalInstance::new(64, 64, 1.0, 1.0, Block::new(1, 1, 4, 4)).unwrap();
        assert!(localize_active(&inst, 500, 0.1, Variant::Proof, &RngHandle::new(0, 0)).is_err());
        assert!(localize_active(&inst, 550, 1.0, Variant::Proof, &RngHandle::new(0, 0)).is_err());
    }

    #[test]
    fn replay_reproduces_decision_path() {
        let inst = SignalInstance::new(64, 64, 0.5, 1.0, Block::new(21, 38, 4, 4)).unwrap();
        let (out, records) = localize_active_recorded(&inst, 22 * 100, 0.1, Variant::Proof, &RngHandle::new(42, 0)).unwrap();
        assert_eq!(records.len(), out.ledger.total_spent());
        let mut replay = ReplayChannel::new(inst.shape(), inst.sigma, records.clone());
        let again = localize_on(&mut replay, 4, 4, 22 * 100, 0.1, Variant::Proof).unwrap();
        assert_eq!(again, out.run);
        assert_eq!(replay.consumed(), records.len());
        for r in &records {
            assert!(r.x.frobenius_norm() <= 1.0 + ENERGY_TOL);
        }
    }
}
