//! Block geometry, ground-truth signal instances and seeded random streams.
//!
//! All indices in the public data model are 1-based: row `1` is the top row
//! and a block starting at `(1, 1)` covers the top-left corner.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matrix dimensions `(n1, n2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n1: usize,
    pub n2: usize,
}

impl Shape {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::param(format!("matrix shape {n1}x{n2} must be positive")));
        }
        Ok(Shape { n1, n2 })
    }

    pub fn cells(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn transpose(&self) -> Shape {
        Shape { n1: self.n2, n2: self.n1 }
    }

    pub(crate) fn check(&self, other: Shape) -> Result<()> {
        if *self != other {
            return Err(Error::Shape {
                expected: (self.n1, self.n2),
                actual: (other.n1, other.n2),
            });
        }
        Ok(())
    }
}

/// A rectangular set of cells, `height x width`, anchored at
/// `(row_start, col_start)`.
///
/// Blocks that cross the bottom or right edge carry the torus they live on
/// and wrap around to row/column 1. Blocks that fit inside the matrix never
/// carry a torus, so a wrapped tile that happens not to cross an edge compares
/// equal to the plain block with the same cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub row_start: usize,
    pub col_start: usize,
    pub height: usize,
    pub width: usize,
    torus: Option<Shape>,
}

impl Block {
    /// A non-wrapping block. Does not know about the owning matrix; use
    /// [`Block::fits`] to validate against a shape.
    pub fn new(row_start: usize, col_start: usize, height: usize, width: usize) -> Self {
        assert!(row_start >= 1 && col_start >= 1, "block indices are 1-based");
        assert!(height >= 1 && width >= 1, "block must be nonempty");
        Block {
            row_start,
            col_start,
            height,
            width,
            torus: None,
        }
    }

    /// A block on the torus `shape`; wraps only if it crosses an edge.
    pub fn on_torus(shape: Shape, row_start: usize, col_start: usize, height: usize, width: usize) -> Self {
        assert!(row_start >= 1 && row_start <= shape.n1 && col_start >= 1 && col_start <= shape.n2);
        assert!(height <= shape.n1 && width <= shape.n2);
        let mut block = Block::new(row_start, col_start, height, width);
        if row_start + height - 1 > shape.n1 || col_start + width - 1 > shape.n2 {
            block.torus = Some(shape);
        }
        block
    }

    pub fn wraps(&self) -> bool {
        self.torus.is_some()
    }

    pub fn cell_count(&self) -> usize {
        self.height * self.width
    }

    /// Whether this block lies inside `shape` without wrapping.
    pub fn fits(&self, shape: Shape) -> bool {
        !self.wraps() && self.row_start + self.height - 1 <= shape.n1 && self.col_start + self.width - 1 <= shape.n2
    }

    fn axis_offset(start: usize, len: usize, modulus: Option<usize>, idx: usize) -> Option<usize> {
        let off = match modulus {
            Some(n) if idx >= 1 && idx <= n => (idx + n - start) % n,
            Some(_) => return None,
            None => idx.checked_sub(start)?,
        };
        (off < len).then_some(off)
    }

    pub fn contains_row(&self, i: usize) -> bool {
        Self::axis_offset(self.row_start, self.height, self.torus.map(|t| t.n1), i).is_some()
    }

    pub fn contains_col(&self, j: usize) -> bool {
        Self::axis_offset(self.col_start, self.width, self.torus.map(|t| t.n2), j).is_some()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.contains_row(i) && self.contains_col(j)
    }

    /// Row indices in block order (wrapping past the last row if needed).
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.torus.map(|t| t.n1);
        (0..self.height).map(move |t| wrap_index(self.row_start + t, n))
    }

    pub fn cols(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.torus.map(|t| t.n2);
        (0..self.width).map(move |t| wrap_index(self.col_start + t, n))
    }

    /// All cells, row-major within the block.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows().flat_map(move |i| self.cols().map(move |j| (i, j)))
    }

    /// Number of cells shared with `other`.
    pub fn overlap(&self, other: &Block) -> usize {
        let rows = other.rows().filter(|&i| self.contains_row(i)).count();
        if rows == 0 {
            return 0;
        }
        rows * other.cols().filter(|&j| self.contains_col(j)).count()
    }

    /// Whether every cell of `inner` lies in `self`.
    pub fn covers(&self, inner: &Block) -> bool {
        self.overlap(inner) == inner.cell_count()
    }

    pub fn transpose(&self) -> Block {
        Block {
            row_start: self.col_start,
            col_start: self.row_start,
            height: self.width,
            width: self.height,
            torus: self.torus.map(|t| t.transpose()),
        }
    }
}

fn wrap_index(idx: usize, modulus: Option<usize>) -> usize {
    match modulus {
        Some(n) => (idx - 1) % n + 1,
        None => idx,
    }
}

fn check_dims(n1: usize, n2: usize, k1: usize, k2: usize) -> Result<Shape> {
    let shape = Shape::new(n1, n2)?;
    if k1 == 0 || k1 > n1 || k2 == 0 || k2 > n2 {
        return Err(Error::param(format!(
            "block size {k1}x{k2} must satisfy 1 <= k <= n for a {n1}x{n2} matrix"
        )));
    }
    Ok(shape)
}

/// The ordered family of all contiguous non-wrapping `k1 x k2` blocks,
/// row-major by `(row_start, col_start)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFamily {
    shape: Shape,
    k1: usize,
    k2: usize,
}

impl BlockFamily {
    pub fn contiguous(n1: usize, n2: usize, k1: usize, k2: usize) -> Result<Self> {
        let shape = check_dims(n1, n2, k1, k2)?;
        Ok(BlockFamily { shape, k1, k2 })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn block_size(&self) -> (usize, usize) {
        (self.k1, self.k2)
    }

    /// Block positions per column and per row: `(n1-k1+1, n2-k2+1)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.shape.n1 - self.k1 + 1, self.shape.n2 - self.k2 + 1)
    }

    pub fn len(&self) -> usize {
        let (a, b) = self.grid();
        a * b
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Option<Block> {
        let (_, cols) = self.grid();
        (index < self.len()).then(|| Block::new(index / cols + 1, index % cols + 1, self.k1, self.k2))
    }

    pub fn index_of(&self, block: &Block) -> Option<usize> {
        if (block.height, block.width) != (self.k1, self.k2) || !block.fits(self.shape) {
            return None;
        }
        let (_, cols) = self.grid();
        Some((block.row_start - 1) * cols + block.col_start - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = Block> + '_ {
        (0..self.len()).map(|i| self.get(i).unwrap())
    }
}

/// Enumerates every contiguous `k1 x k2` block of an `n1 x n2` matrix.
pub fn enumerate_blocks(n1: usize, n2: usize, k1: usize, k2: usize) -> Result<BlockFamily> {
    BlockFamily::contiguous(n1, n2, k1, k2)
}

/// Ground truth: an `n1 x n2` matrix equal to `mu` on `b_star` and zero
/// elsewhere, observed with Gaussian noise of standard deviation `sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalInstance {
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub mu: f64,
    pub sigma: f64,
    pub b_star: Block,
}

impl SignalInstance {
    pub fn new(n1: usize, n2: usize, mu: f64, sigma: f64, b_star: Block) -> Result<Self> {
        let shape = check_dims(n1, n2, b_star.height, b_star.width)?;
        if !b_star.fits(shape) {
            return Err(Error::param(format!(
                "true block {b_star:?} must lie inside {n1}x{n2} without wrapping"
            )));
        }
        check_levels(mu, sigma)?;
        Ok(SignalInstance {
            n1,
            n2,
            k1: b_star.height,
            k2: b_star.width,
            mu,
            sigma,
            b_star,
        })
    }

    /// Draws `b_star` uniformly from the contiguous family.
    pub fn sample(n1: usize, n2: usize, k1: usize, k2: usize, mu: f64, sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        let family = enumerate_blocks(n1, n2, k1, k2)?;
        check_levels(mu, sigma)?;
        let b_star = family.get(rng.random_range(0..family.len())).unwrap();
        SignalInstance::new(n1, n2, mu, sigma, b_star)
    }

    pub fn shape(&self) -> Shape {
        Shape { n1: self.n1, n2: self.n2 }
    }

    pub fn signal_value(&self, i: usize, j: usize) -> Result<f64> {
        if i == 0 || i > self.n1 || j == 0 || j > self.n2 {
            return Err(Error::Index {
                i,
                j,
                n1: self.n1,
                n2: self.n2,
            });
        }
        Ok(if self.b_star.contains(i, j) { self.mu } else { 0.0 })
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        SignalInstance { mu, ..self.clone() }
    }

    /// Same signal embedded in a larger zero-padded matrix.
    pub fn padded(&self, n1: usize, n2: usize) -> Result<Self> {
        if n1 < self.n1 || n2 < self.n2 {
            return Err(Error::param("padding cannot shrink the matrix"));
        }
        SignalInstance::new(n1, n2, self.mu, self.sigma, self.b_star)
    }

    pub fn transpose(&self) -> Self {
        SignalInstance {
            n1: self.n2,
            n2: self.n1,
            k1: self.k2,
            k2: self.k1,
            mu: self.mu,
            sigma: self.sigma,
            b_star: self.b_star.transpose(),
        }
    }
}

/// Free-function form of [`SignalInstance::sample`] drawing from a stream handle.
pub fn sample_instance(n1: usize, n2: usize, k1: usize, k2: usize, mu: f64, sigma: f64, rng: &RngHandle) -> Result<SignalInstance> {
    SignalInstance::sample(n1, n2, k1, k2, mu, sigma, &mut rng.rng())
}

fn check_levels(mu: f64, sigma: f64) -> Result<()> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::param(format!("mu = {mu} must be finite and nonnegative")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma = {sigma} must be finite and positive")));
    }
    Ok(())
}

/// What a derived stream is used for within one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamTag {
    Instance = 1,
    Design = 2,
    Noise = 3,
}

/// A seeded stream label.
///
/// Streams are ChaCha8 keyed by `seed` (expanded with `seed_from_u64`) with
/// the 64-bit ChaCha stream number set to `stream_id`. Derived handles use
/// `stream_id = trial_index << 8 | tag`, so every (seed, trial, tag) triple
/// gets its own generator no matter which thread runs the trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngHandle {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngHandle { seed, stream_id }
    }

    pub fn derive(seed: u64, trial_index: u64, tag: StreamTag) -> Self {
        assert!(trial_index < 1 << 56, "trial index exceeds stream label space");
        RngHandle {
            seed,
            stream_id: trial_index << 8 | tag as u64,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
