//! Monte Carlo sweeps of success probability against SNR.
//!
//! A sweep runs every `(size, snr)` point of a [`SweepSpec`] with independent
//! trials. Trial `t` of point `p` uses the stream index `p * trials + t`, so the
//! output does not depend on scheduling or thread count.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{active_trial, ActiveParams, Variant, SCHEDULE_UNITS};
use crate::bounds::{self, BoundQuery};
use crate::config::{parse_grid, parse_sizes, ConfigMap};
use crate::detect::run_detection;
use crate::error::{Error, Result};
use crate::model::{RngHandle, SignalInstance, StreamTag};
use crate::passive::{passive_trial, PassiveParams};

pub const CSV_HEADER: &str = "mode,n1,n2,k1,k2,m,sigma,snr,snr_rescaled,successes,trials,phat,stderr,theory_lb,theory_ub";
pub const CROSSING_LEVEL: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Detect,
    Passive,
    Active,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Detect => "detect",
            Mode::Passive => "passive",
            Mode::Active => "active",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detect" => Ok(Mode::Detect),
            "passive" => Ok(Mode::Passive),
            "active" => Ok(Mode::Active),
            _ => Err(Error::param(format!("unknown mode '{s}' (detect, passive, active)"))),
        }
    }
}

/// Whether grid values are raw `mu / sigma` or already on the rescaled axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GridAxis {
    #[default]
    Raw,
    Rescaled,
}

impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(GridAxis::Raw),
            "rescaled" => Ok(GridAxis::Rescaled),
            _ => Err(Error::param(format!("unknown grid axis '{s}' (raw, rescaled)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Size {
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
}

impl Size {
    pub fn square(n: usize, k: usize) -> Self {
        Size {
            n1: n,
            n2: n,
            k1: k,
            k2: k,
        }
    }
}

/// A full sweep description. For `Mode::Active`, `m` is the schedule unit
/// and each trial spends up to `22 m` measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub mode: Mode,
    pub sizes: Vec<Size>,
    pub m: usize,
    pub sigma: f64,
    pub grid: Vec<f64>,
    pub axis: GridAxis,
    pub trials: usize,
    pub seed: u64,
    pub alpha: f64,
    pub delta: f64,
    pub variant: Variant,
}

impl SweepSpec {
    pub fn new(mode: Mode, sizes: Vec<Size>, m: usize, grid: Vec<f64>) -> Self {
        SweepSpec {
            mode,
            sizes,
            m,
            sigma: 1.0,
            grid,
            axis: GridAxis::Raw,
            trials: 100,
            seed: 0,
            alpha: 0.05,
            delta: 0.1,
            variant: Variant::Proof,
        }
    }

    /// Builds a spec from configuration keys `mode`, `sizes`, `m` (or
    /// `budget` in active mode), `sigma`, `snr_grid`, `grid_axis`, `trials`,
    /// `seed`, `alpha`, `delta` and `variant`.
    pub fn from_config(c: &ConfigMap) -> Result<Self> {
        let mode: Mode = c.parsed("mode")?.ok_or_else(|| Error::param("config needs 'mode'"))?;
        let sizes = parse_sizes(c.get("sizes").ok_or_else(|| Error::param("config needs 'sizes'"))?)?
            .into_iter()
            .map(|(n1, n2, k1, k2)| Size { n1, n2, k1, k2 })
            .collect();
        let grid = parse_grid(c.get("snr_grid").ok_or_else(|| Error::param("config needs 'snr_grid'"))?)?;
        let default_m = if mode == Mode::Active { 500 } else { 100 };
        let m = match (c.parsed::<usize>("m")?, c.parsed::<usize>("budget")?) {
            (Some(_), Some(_)) => return Err(Error::param("give either 'm' or 'budget', not both")),
            (Some(m), None) => m,
            (None, Some(b)) if mode == Mode::Active => b / SCHEDULE_UNITS,
            (None, Some(b)) => b,
            (None, None) => default_m,
        };
        let variant = match c.get("variant") {
            None | Some("proof") => Variant::Proof,
            Some("box") => Variant::Box,
            Some(v) => return Err(Error::param(format!("unknown variant '{v}' (proof, box)"))),
        };
        let spec = SweepSpec {
            mode,
            sizes,
            m,
            sigma: c.parsed_or("sigma", 1.0)?,
            grid,
            axis: c.parsed_or("grid_axis", GridAxis::Raw)?,
            trials: c.parsed_or("trials", 100)?,
            seed: c.parsed_or("seed", 0)?,
            alpha: c.parsed_or("alpha", 0.05)?,
            delta: c.parsed_or("delta", 0.1)?,
            variant,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.grid.is_empty() {
            return Err(Error::param("sweep needs at least one size and one grid point"));
        }
        if self.trials == 0 || self.m == 0 {
            return Err(Error::param("sweep needs trials >= 1 and m >= 1"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::param("sigma must be positive"));
        }
        if self.grid.iter().any(|&s| s < 0.0) {
            return Err(Error::param("snr grid values must be non-negative"));
        }
        for s in &self.sizes {
            if s.k1 == 0 || s.k2 == 0 || s.k1 > s.n1 || s.k2 > s.n2 {
                return Err(Error::param(format!("bad size {s:?}")));
            }
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        match self.mode {
            Mode::Active => SCHEDULE_UNITS * self.m,
            _ => self.m,
        }
    }
}

/// Rescaled SNR abscissa.
///
/// - detect: `sqrt(m) k1 k2 / sqrt(n1 n2) * snr`
/// - passive: `sqrt(m min(k1, k2) / (n1 n2)) * snr`
/// - active (`m` the schedule unit): `snr * min(sqrt(m) k1 k2 / sqrt(n1 n2), sqrt(m kmin / ln kmax))`,
///   the smaller factor belonging to whichever term of the sufficient SNR
///   dominates. For `kmax = 1` only the first factor applies.
pub fn rescale_snr(mode: Mode, n1: usize, n2: usize, k1: usize, k2: usize, m: usize, snr: f64) -> f64 {
    let (n1, n2, k1, k2, m) = (n1 as f64, n2 as f64, k1 as f64, k2 as f64, m as f64);
    let area = (n1 * n2).sqrt();
    let factor = match mode {
        Mode::Detect => m.sqrt() * k1 * k2 / area,
        Mode::Passive => (m * k1.min(k2)).sqrt() / area,
        Mode::Active => {
            let coarse = m.sqrt() * k1 * k2 / area;
            let lk = k1.max(k2).ln();
            if lk > 0.0 {
                coarse.min((m * k1.min(k2) / lk).sqrt())
            } else {
                coarse
            }
        }
    };
    snr * factor
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub m: usize,
    pub sigma: f64,
    pub snr: f64,
    pub snr_rescaled: f64,
    pub successes: usize,
    pub trials: usize,
    pub phat: f64,
    pub stderr: f64,
    pub theory_lb: f64,
    pub theory_ub: f64,
}

impl SweepRow {
    pub fn size(&self) -> Size {
        Size {
            n1: self.n1,
            n2: self.n2,
            k1: self.k1,
            k2: self.k2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Rows grouped by problem size, in first-appearance order.
    pub fn curves(&self) -> Vec<Vec<&SweepRow>> {
        let mut out: Vec<(Size, Vec<&SweepRow>)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|(s, _)| *s == row.size()) {
                Some((_, v)) => v.push(row),
                None => out.push((row.size(), vec![row])),
            }
        }
        out.into_iter().map(|(_, v)| v).collect()
    }
}

/// Reference thresholds in SNR units (`mu / sigma`).
fn theory(spec: &SweepSpec, s: Size) -> (f64, f64) {
    let q = |m: usize, level: f64| BoundQuery::new(s.n1, s.n2, s.k1, s.k2, m, 1.0, level);
    match spec.mode {
        Mode::Detect => {
            let q = q(spec.m, spec.alpha);
            (bounds::detection_lb(&q).value, bounds::detection_ub(&q).value)
        }
        Mode::Passive => {
            let q = q(spec.m, spec.alpha);
            (bounds::passive_loc_lb(&q, 1.0).value, bounds::passive_loc_ub(&q, 1.0).value)
        }
        Mode::Active => (
            bounds::active_loc_lb(&q(spec.budget(), spec.delta)).value,
            bounds::active_loc_ub(&q(spec.m, spec.delta)).value,
        ),
    }
}

fn one_trial(spec: &SweepSpec, s: Size, mu: f64, trial: u64) -> Result<bool> {
    match spec.mode {
        Mode::Detect => {
            let mut rng = RngHandle::derive(spec.seed, trial, StreamTag::Instance).rng();
            let inst = SignalInstance::sample(s.n1, s.n2, s.k1, s.k2, mu, spec.sigma, &mut rng)?;
            let out = run_detection(&inst, spec.m, spec.alpha, &RngHandle::derive(spec.seed, trial, StreamTag::Noise))?;
            Ok(out.reject == (mu > 0.0))
        }
        Mode::Passive => {
            let p = PassiveParams {
                n1: s.n1,
                n2: s.n2,
                k1: s.k1,
                k2: s.k2,
                mu,
                sigma: spec.sigma,
                m: spec.m,
            };
            Ok(passive_trial(&p, spec.seed, trial)?.success)
        }
        Mode::Active => {
            let p = ActiveParams {
                n1: s.n1,
                n2: s.n2,
                k1: s.k1,
                k2: s.k2,
                mu,
                sigma: spec.sigma,
                budget: spec.budget(),
                delta: spec.delta,
                variant: spec.variant,
            };
            Ok(active_trial(&p, spec.seed, trial)?.success)
        }
    }
}

/// Runs every trial of every grid point on the current rayon pool.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let points: Vec<(Size, f64, f64)> = spec
        .sizes
        .iter()
        .flat_map(|&s| {
            spec.grid.iter().map(move |&g| {
                let unit = rescale_snr(spec.mode, s.n1, s.n2, s.k1, s.k2, spec.m, 1.0);
                match spec.axis {
                    GridAxis::Raw => (s, g, g * unit),
                    GridAxis::Rescaled => (s, g / unit, g),
                }
            })
        })
        .collect();
    let trials = spec.trials;
    let successes = (0..points.len() * trials)
        .into_par_iter()
        .map(|job| {
            let (s, snr, _) = points[job / trials];
            one_trial(spec, s, snr * spec.sigma, job as u64).map(|ok| (job / trials, ok))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; points.len()];
    for (p, ok) in successes {
        counts[p] += ok as usize;
    }
    let rows = points
        .iter()
        .zip(counts)
        .map(|(&(s, snr, snr_rescaled), successes)| {
            let phat = successes as f64 / trials as f64;
            let (theory_lb, theory_ub) = theory(spec, s);
            SweepRow {
                mode: spec.mode,
                n1: s.n1,
                n2: s.n2,
                k1: s.k1,
                k2: s.k2,
                m: spec.m,
                sigma: spec.sigma,
                snr,
                snr_rescaled,
                successes,
                trials,
                phat,
                stderr: (phat * (1.0 - phat) / trials as f64).sqrt(),
                theory_lb,
                theory_ub,
            }
        })
        .collect();
    Ok(SweepResult { rows })
}

/// Smallest rescaled abscissa whose success frequency reaches `level`.
pub fn crossing(curve: &[&SweepRow], level: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|r| r.phat >= level)
        .map(|r| r.snr_rescaled)
        .min_by(f64::total_cmp)
}

/// Whether `phat` never drops by more than `slack` standard errors as the
/// SNR grows.
pub fn is_monotone(curve: &[&SweepRow], slack: f64) -> bool {
    let mut sorted: Vec<&SweepRow> = curve.to_vec();
    sorted.sort_by(|a, b| a.snr.total_cmp(&b.snr));
    sorted.iter().enumerate().all(|(i, hi)| {
        sorted[..i]
            .iter()
            .all(|lo| hi.phat + slack * lo.stderr.max(hi.stderr) + 1e-12 >= lo.phat)
    })
}

pub fn write_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv {
        path: "<stream>".into(),
        source: e,
    };
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for row in &result.rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<stream>", e))
}

pub fn csv_bytes(result: &SweepResult) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(result, &mut buf)?;
    Ok(buf)
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let bytes = csv_bytes(result)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<SweepResult> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(csv_err)?;
    Ok(SweepResult { rows })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot of `phat` against the rescaled SNR, one polyline per size, with
/// a dashed vertical line at the first curve's 0.95 crossing.
pub fn render_svg(result: &SweepResult) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let curves = result.curves();
    let xmax = result.rows.iter().map(|r| r.snr_rescaled).fold(0.0, f64::max);
    let xmax = if xmax > 0.0 { xmax } else { 1.0 };
    let px = |x: f64| pad + x / xmax * (w - 2.0 * pad);
    let py = |p: f64| h - pad - p * (h - 2.0 * pad);
    let mut s = String::new();
    s += &format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += &format!(
        "<path d=\"M{:.1} {:.1} V{:.1} H{:.1}\" fill=\"none\" stroke=\"black\"/>\n",
        pad,
        pad,
        h - pad,
        w - pad
    );
    for tick in [0.0, 0.5, 1.0] {
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{tick}</text>\n",
            pad - 6.0,
            py(tick) + 4.0
        );
    }
    s += &format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">{:.3}</text>\n",
        w - pad - 20.0,
        h - pad + 16.0,
        xmax
    );
    s += &format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">rescaled SNR</text>\n",
        w / 2.0,
        h - 12.0
    );
    for (i, curve) in curves.iter().enumerate() {
        let mut pts: Vec<&&SweepRow> = curve.iter().collect();
        pts.sort_by(|a, b| a.snr_rescaled.total_cmp(&b.snr_rescaled));
        let coords: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", px(r.snr_rescaled), py(r.phat))).collect();
        let color = PALETTE[i % PALETTE.len()];
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        );
        let r = curve[0];
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">n={}x{} k={}x{}</text>\n",
            pad + 10.0,
            pad + 14.0 * (i as f64 + 1.0),
            r.n1,
            r.n2,
            r.k1,
            r.k2
        );
    }
    if let Some(x) = curves.first().and_then(|c| crossing(c, CROSSING_LEVEL)) {
        s += &format!(
            "<line x1=\"{0:.2}\" y1=\"{1:.1}\" x2=\"{0:.2}\" y2=\"{2:.1}\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>\n",
            px(x),
            pad,
            h - pad
        );
    }
    s += "</svg>\n";
    s
}

pub fn emit_svg(result: &SweepResult, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(result)).map_err(|e| Error::io(path, e))
}
