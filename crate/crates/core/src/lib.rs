//! Detection and localization of a contiguous block of weak activation in a
//! matrix observed only through noisy linear (compressive) measurements.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: blocks, block families, ground-truth signal instances and the
//!   seeded stream contract used by every randomized routine.
//! - [`measure`]: sensing matrices, the trace inner product, noise injection
//!   and budget accounting.
//! - [`detect`]: the passive sum test and empirical detection risk.
//! - [`passive`]: exhaustive least-squares localization over all contiguous
//!   blocks, accelerated with integral images.
//! - [`active`]: compressive binary search over four shifted tilings followed
//!   by exact row/column localization under a fixed `22m` budget schedule.
//! - [`bounds`]: closed-form SNR threshold evaluators.
//! - [`harness`]: Monte Carlo sweeps, rescaled SNR axes, CSV and SVG output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod bounds;
pub mod config;
pub mod detect;
pub mod error;
pub mod harness;
pub mod measure;
pub mod model;
pub mod passive;

pub use error::{Error, Result};
pub use model::{Block, BlockFamily, RngHandle, Shape, SignalInstance};
