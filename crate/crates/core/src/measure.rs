//! The linear observation model `y = tr(A X) + eps`, `eps ~ N(0, sigma^2)`.
//!
//! Sensing matrices are stored in the sparsest representation that the
//! measurement schemes need. Deterministic constructors produce unit
//! Frobenius norm; the Gaussian ensemble has unit norm in expectation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Block, Shape, SignalInstance};

/// Slack allowed on `||X||_F <= 1` for deterministic constructors.
pub const ENERGY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    /// Row-major `n1 * n2` values.
    Dense { values: Vec<f64> },
    /// The same value on every cell.
    Uniform { value: f64 },
    /// Value `v_b` on the cells of each block `b`; blocks are pairwise disjoint.
    Blocks { blocks: Vec<(Block, f64)> },
    /// `value` on the listed rows of one column.
    Column { rows: Vec<usize>, col: usize, value: f64 },
    /// `value` on the listed columns of one row.
    Row { cols: Vec<usize>, row: usize, value: f64 },
}

/// One sensing matrix `X_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensingMatrix {
    pub shape: Shape,
    pub design: Design,
}

impl SensingMatrix {
    /// A dense matrix supplied by the caller; must satisfy `||X||_F <= 1`.
    pub fn dense(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.cells() {
            return Err(Error::param(format!(
                "dense design needs {} values, got {}",
                shape.cells(),
                values.len()
            )));
        }
        let x = SensingMatrix {
            shape,
            design: Design::Dense { values },
        };
        let norm = x.frobenius_norm();
        if norm > 1.0 + ENERGY_TOL {
            return Err(Error::param(format!("sensing matrix has Frobenius norm {norm} > 1")));
        }
        Ok(x)
    }

    /// Gaussian ensemble: iid `N(0, 1/(n1 n2))` entries, so `E||X||_F^2 = 1`.
    pub fn gaussian(shape: Shape, rng: &mut impl Rng) -> Self {
        let scale = (shape.cells() as f64).sqrt().recip();
        let values = (0..shape.cells()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        SensingMatrix {
            shape,
            design: Design::Dense { values },
        }
    }

    /// `(n1 n2)^{-1/2}` on every cell.
    pub fn all_ones(shape: Shape) -> Self {
        SensingMatrix {
            shape,
            design: Design::Uniform {
                value: (shape.cells() as f64).sqrt().recip(),
            },
        }
    }

    /// `|rows|^{-1/2}` on `rows` of column `col`.
    pub fn column(shape: Shape, rows: Vec<usize>, col: usize) -> Result<Self> {
        check_line(&rows, shape.n1, "row")?;
        check_index(col, shape.n2, "column")?;
        let value = (rows.len() as f64).sqrt().recip();
        Ok(SensingMatrix {
            shape,
            design: Design::Column { rows, col, value },
        })
    }

    /// `|cols|^{-1/2}` on `cols` of row `row`.
    pub fn row(shape: Shape, cols: Vec<usize>, row: usize) -> Result<Self> {
        check_line(&cols, shape.n2, "column")?;
        check_index(row, shape.n1, "row")?;
        let value = (cols.len() as f64).sqrt().recip();
        Ok(SensingMatrix {
            shape,
            design: Design::Row { cols, row, value },
        })
    }

    /// `+v` on the `plus` blocks and `-v` on the `minus` blocks, with `v`
    /// chosen for unit energy. All blocks must be disjoint and equally sized.
    pub fn signed_blocks(shape: Shape, plus: &[Block], minus: &[Block]) -> Result<Self> {
        let cells: usize = plus.iter().chain(minus).map(Block::cell_count).sum();
        if cells == 0 {
            return Err(Error::param("signed block design needs at least one block"));
        }
        let v = (cells as f64).sqrt().recip();
        let blocks = plus.iter().map(|b| (*b, v)).chain(minus.iter().map(|b| (*b, -v))).collect();
        Ok(SensingMatrix {
            shape,
            design: Design::Blocks { blocks },
        })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let Shape { n1, n2 } = self.shape;
        assert!(i >= 1 && i <= n1 && j >= 1 && j <= n2, "entry ({i}, {j}) out of range");
        match &self.design {
            Design::Dense { values } => values[(i - 1) * n2 + j - 1],
            Design::Uniform { value } => *value,
            Design::Blocks { blocks } => blocks.iter().filter(|(b, _)| b.contains(i, j)).map(|(_, v)| v).sum(),
            Design::Column { rows, col, value } => {
                if j == *col && rows.contains(&i) {
                    *value
                } else {
                    0.0
                }
            }
            Design::Row { cols, row, value } => {
                if i == *row && cols.contains(&j) {
                    *value
                } else {
                    0.0
                }
            }
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        if let Design::Dense { values } = &self.design {
            return values.clone();
        }
        let Shape { n1, n2 } = self.shape;
        let mut out = vec![0.0; n1 * n2];
        match &self.design {
            Design::Dense { .. } => unreachable!(),
            Design::Uniform { value } => out.fill(*value),
            Design::Blocks { blocks } => {
                for (b, v) in blocks {
                    for (i, j) in b.cells() {
                        out[(i - 1) * n2 + j - 1] += v;
                    }
                }
            }
            Design::Column { rows, col, value } => {
                for &i in rows {
                    out[(i - 1) * n2 + col - 1] = *value;
                }
            }
            Design::Row { cols, row, value } => {
                for &j in cols {
                    out[(row - 1) * n2 + j - 1] = *value;
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        let sq = match &self.design {
            Design::Dense { values } => values.iter().map(|v| v * v).sum(),
            Design::Uniform { value } => value * value * self.shape.cells() as f64,
            Design::Blocks { blocks } => blocks.iter().map(|(b, v)| v * v * b.cell_count() as f64).sum(),
            Design::Column { rows, value, .. } => value * value * rows.len() as f64,
            Design::Row { cols, value, .. } => value * value * cols.len() as f64,
        };
        f64::sqrt(sq)
    }
}

fn check_index(idx: usize, n: usize, what: &str) -> Result<()> {
    if idx == 0 || idx > n {
        return Err(Error::param(format!("{what} index {idx} outside 1..={n}")));
    }
    Ok(())
}

fn check_line(indices: &[usize], n: usize, what: &str) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::param(format!("empty {what} support")));
    }
    for &i in indices {
        check_index(i, n, what)?;
    }
    Ok(())
}

/// `tr(A X) = mu * sum_{(i,j) in B*} X_ij`.
pub fn trace_inner(instance: &SignalInstance, x: &SensingMatrix) -> Result<f64> {
    instance.shape().check(x.shape)?;
    let b = &instance.b_star;
    let mu = instance.mu;
    let sum = match &x.design {
        Design::Dense { values } => b.cells().map(|(i, j)| values[(i - 1) * instance.n2 + j - 1]).sum(),
        Design::Uniform { value } => value * b.cell_count() as f64,
        Design::Blocks { blocks } => blocks.iter().map(|(blk, v)| v * blk.overlap(b) as f64).sum(),
        Design::Column { rows, col, value } => {
            if b.contains_col(*col) {
                value * rows.iter().filter(|&&i| b.contains_row(i)).count() as f64
            } else {
                0.0
            }
        }
        Design::Row { cols, row, value } => {
            if b.contains_row(*row) {
                value * cols.iter().filter(|&&j| b.contains_col(j)).count() as f64
            } else {
                0.0
            }
        }
    };
    Ok(mu * sum)
}

/// Which part of a procedure a measurement belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhaseTag {
    Detection,
    Passive,
    /// Compressive binary search, level `1..=s0`.
    Cbs(u32),
    ExactCol(Stage),
    ExactRow(Stage),
}

/// The two halves of exact localization along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Repeated measurement of the lattice of candidate lines.
    Scan,
    /// Halving search for the far edge of the active window.
    Search,
}

/// Budget accounts that phases are charged against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Account {
    Detection,
    Passive,
    Cbs,
    Scan,
    Search,
}

impl PhaseTag {
    pub fn account(&self) -> Account {
        match self {
            PhaseTag::Detection => Account::Detection,
            PhaseTag::Passive => Account::Passive,
            PhaseTag::Cbs(_) => Account::Cbs,
            PhaseTag::ExactCol(Stage::Scan) | PhaseTag::ExactRow(Stage::Scan) => Account::Scan,
            PhaseTag::ExactCol(Stage::Search) | PhaseTag::ExactRow(Stage::Search) => Account::Search,
        }
    }
}

impl fmt::Display for PhaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let stage = |s: &Stage| match s {
            Stage::Scan => "scan",
            Stage::Search => "search",
        };
        match self {
            PhaseTag::Detection => write!(f, "detection"),
            PhaseTag::Passive => write!(f, "passive"),
            PhaseTag::Cbs(s) => write!(f, "cbs-level-{s}"),
            PhaseTag::ExactCol(s) => write!(f, "exact-col-{}", stage(s)),
            PhaseTag::ExactRow(s) => write!(f, "exact-row-{}", stage(s)),
        }
    }
}

/// Enforces the total measurement budget and optional per-account caps.
#[derive(Clone, Debug, Default)]
pub struct BudgetLedger {
    total_allowed: usize,
    caps: BTreeMap<Account, usize>,
    spent: BTreeMap<PhaseTag, usize>,
}

impl BudgetLedger {
    pub fn new(total_allowed: usize) -> Self {
        BudgetLedger {
            total_allowed,
            ..Default::default()
        }
    }

    /// Reserves at most `cap` measurements for `account`.
    pub fn with_cap(mut self, account: Account, cap: usize) -> Self {
        self.caps.insert(account, cap);
        self
    }

    pub fn total_allowed(&self) -> usize {
        self.total_allowed
    }

    pub fn cap(&self, account: Account) -> Option<usize> {
        self.caps.get(&account).copied()
    }

    pub fn total_spent(&self) -> usize {
        self.spent.values().sum()
    }

    pub fn remaining(&self) -> usize {
        self.total_allowed - self.total_spent()
    }

    pub fn spent_in(&self, account: Account) -> usize {
        self.spent.iter().filter(|(t, _)| t.account() == account).map(|(_, n)| n).sum()
    }

    pub fn spent_per_phase(&self) -> &BTreeMap<PhaseTag, usize> {
        &self.spent
    }

    /// Records `count` measurements, refusing any that would overdraw the
    /// total or the phase's account.
    pub fn charge(&mut self, phase: PhaseTag, count: usize) -> Result<()> {
        let remaining = self.remaining();
        if count > remaining {
            return Err(Error::Budget {
                account: "total".into(),
                requested: count,
                remaining,
            });
        }
        let account = phase.account();
        if let Some(cap) = self.cap(account) {
            let left = cap - self.spent_in(account);
            if count > left {
                return Err(Error::Budget {
                    account: format!("{account:?}"),
                    requested: count,
                    remaining: left,
                });
            }
        }
        *self.spent.entry(phase).or_default() += count;
        Ok(())
    }
}

/// One observation `(y_i, X_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub y: f64,
    pub x: Arc<SensingMatrix>,
    pub phase: PhaseTag,
}

/// Takes a single noisy measurement and charges it to `ledger`.
pub fn measure(
    instance: &SignalInstance,
    x: Arc<SensingMatrix>,
    rng: &mut impl Rng,
    ledger: &mut BudgetLedger,
    phase: PhaseTag,
) -> Result<MeasurementRecord> {
    let signal = trace_inner(instance, &x)?;
    ledger.charge(phase, 1)?;
    let y = signal + instance.sigma * rng.sample::<f64, _>(StandardNormal);
    Ok(MeasurementRecord { y, x, phase })
}

/// Source of measurements for adaptive procedures.
///
/// Procedures see only the known noise level, the matrix shape and the
/// observations they request, never the ground truth.
pub trait Channel {
    fn shape(&self) -> Shape;

    fn sigma(&self) -> f64;

    /// Measures `x` `count` times and returns the sum of the observations.
    fn measure_sum(&mut self, x: &Arc<SensingMatrix>, phase: PhaseTag, count: usize) -> Result<f64>;
}

/// Simulated measurements of a known instance.
pub struct LiveChannel<'a> {
    instance: &'a SignalInstance,
    rng: ChaCha8Rng,
    ledger: BudgetLedger,
    transcript: Option<Vec<MeasurementRecord>>,
}

impl<'a> LiveChannel<'a> {
    pub fn new(instance: &'a SignalInstance, rng: ChaCha8Rng, ledger: BudgetLedger) -> Self {
        LiveChannel {
            instance,
            rng,
            ledger,
            transcript: None,
        }
    }

    /// Keep every record for later export or replay.
    pub fn recording(mut self) -> Self {
        self.transcript = Some(Vec::new());
        self
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn into_parts(self) -> (BudgetLedger, Option<Vec<MeasurementRecord>>) {
        (self.ledger, self.transcript)
    }
}

impl Channel for LiveChannel<'_> {
    fn shape(&self) -> Shape {
        self.instance.shape()
    }

    fn sigma(&self) -> f64 {
        self.instance.sigma
    }

    fn measure_sum(&mut self, x: &Arc<SensingMatrix>, phase: PhaseTag, count: usize) -> Result<f64> {
        let signal = trace_inner(self.instance, x)?;
        self.ledger.charge(phase, count)?;
        let sigma = self.instance.sigma;
        let mut sum = 0.0;
        for _ in 0..count {
            let y = signal + sigma * self.rng.sample::<f64, _>(StandardNormal);
            if let Some(t) = self.transcript.as_mut() {
                t.push(MeasurementRecord {
                    y,
                    x: Arc::clone(x),
                    phase,
                });
            }
            sum += y;
        }
        Ok(sum)
    }
}

/// Feeds back a recorded transcript, failing if the procedure asks for a
/// different sensing matrix or phase than the one recorded.
pub struct ReplayChannel {
    shape: Shape,
    sigma: f64,
    records: Vec<MeasurementRecord>,
    cursor: usize,
}

impl ReplayChannel {
    pub fn new(shape: Shape, sigma: f64, records: Vec<MeasurementRecord>) -> Self {
        ReplayChannel {
            shape,
            sigma,
            records,
            cursor: 0,
        }
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }
}

impl Channel for ReplayChannel {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn measure_sum(&mut self, x: &Arc<SensingMatrix>, phase: PhaseTag, count: usize) -> Result<f64> {
        let mut sum = 0.0;
        for _ in 0..count {
            let index = self.cursor;
            let rec = self.records.get(index).ok_or(Error::Replay {
                index,
                reason: "transcript exhausted".into(),
            })?;
            if rec.phase != phase || *rec.x != **x {
                return Err(Error::Replay {
                    index,
                    reason: format!("requested {phase} design differs from recorded {}", rec.phase),
                });
            }
            sum += rec.y;
            self.cursor += 1;
        }
        Ok(sum)
    }
}

/// Writes one JSON object per record: `{"index", "phase", "y", "x"}` where
/// `x` is the tagged sensing-matrix descriptor. Debugging aid; the layout is
/// not a stable interchange format.
pub fn write_transcript_jsonl(records: &[MeasurementRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (index, rec) in records.iter().enumerate() {
        let line = serde_json::json!({
            "index": index,
            "phase": rec.phase.to_string(),
            "y": rec.y,
            "x": &*rec.x,
        });
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
