use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use blocksense::active::{run_active_trials, ActiveParams, Variant};
use blocksense::bounds::{BoundQuery, Which};
use blocksense::config::{parse_grid, ConfigMap};
use blocksense::detect::{estimate_detection_risk, DetectionParams};
use blocksense::harness::{emit_csv, emit_svg, run_sweep, SweepSpec};
use blocksense::passive::{run_passive_trials, PassiveParams};
use blocksense::{Error, Result};

#[derive(Parser)]
#[command(
    name = "blocksense",
    version,
    about = "Detect and localize a contiguous activation block from compressive measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical risk of the all-ones sum test.
    Detect(DetectArgs),
    /// Exhaustive least-squares localization from Gaussian measurements.
    LocalizePassive(PassiveArgs),
    /// Adaptive localization under the 22m schedule.
    LocalizeActive(ActiveArgs),
    /// Evaluate threshold formulas over a parameter grid.
    Bounds(BoundsArgs),
    /// Monte Carlo sweep of success probability against SNR.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Dims {
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
    #[arg(long)]
    k1: usize,
    #[arg(long)]
    k2: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    dims: Dims,
    /// One or more amplitudes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    mu: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct PassiveArgs {
    #[command(flatten)]
    dims: Dims,
    #[arg(long)]
    mu: f64,
    #[arg(long, default_value_t = 100)]
    m: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Proof,
    Box,
}

#[derive(Args)]
struct ActiveArgs {
    #[command(flatten)]
    dims: Dims,
    #[arg(long)]
    mu: f64,
    /// Total measurement budget (22 schedule units).
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Proof)]
    variant: VariantArg,
}

#[derive(Args)]
struct BoundsArgs {
    /// Bound names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    which: Vec<String>,
    /// Parameter grid, e.g. `n=16,32,64;k=4;m=100;sigma=1;level=0.05`.
    /// Keys: n, k (square shorthands), n1, n2, k1, k2, m, sigma, level.
    /// Each value may also be a `start:stop:count` range.
    #[arg(long)]
    grid: String,
    /// Value for every unspecified constant.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_svg: Option<PathBuf>,
}

fn write_rows<T: Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
    let label = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let csv_err = |e: csv::Error| Error::Csv {
        path: label.clone(),
        source: e,
    };
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&label, e))
}

fn detect(a: DetectArgs) -> Result<()> {
    let d = &a.dims;
    let params = DetectionParams {
        n1: d.n1,
        n2: d.n2,
        k1: d.k1,
        k2: d.k2,
        sigma: d.sigma,
        m: a.m,
        alpha: a.alpha,
    };
    if !params.small_block() {
        eprintln!("warning: k > n/2 on some axis; the test's guarantee does not cover this regime");
    }
    let rows = estimate_detection_risk(&params, &a.mu, d.trials, d.seed)?;
    write_rows(&rows, d.out.as_deref())
}

#[derive(Serialize)]
struct PassiveRow {
    trial: u64,
    success: u8,
    est_row: usize,
    est_col: usize,
    true_row: usize,
    true_col: usize,
    f_star: f64,
    f_best: f64,
}

fn localize_passive(a: PassiveArgs) -> Result<()> {
    let d = &a.dims;
    let p = PassiveParams {
        n1: d.n1,
        n2: d.n2,
        k1: d.k1,
        k2: d.k2,
        mu: a.mu,
        sigma: d.sigma,
        m: a.m,
    };
    let rows: Vec<PassiveRow> = run_passive_trials(&p, d.trials, d.seed)?
        .into_iter()
        .map(|t| PassiveRow {
            trial: t.trial,
            success: t.success as u8,
            est_row: t.estimate.row_start,
            est_col: t.estimate.col_start,
            true_row: t.truth.row_start,
            true_col: t.truth.col_start,
            f_star: t.f_star,
            f_best: t.f_best,
        })
        .collect();
    write_rows(&rows, d.out.as_deref())
}

#[derive(Serialize)]
struct ActiveRow {
    trial: u64,
    success: u8,
    est_row: usize,
    est_col: usize,
    spent_total: usize,
    spent_cbs: usize,
    spent_stage1: usize,
    spent_search: usize,
}

fn localize_active(a: ActiveArgs) -> Result<()> {
    let d = &a.dims;
    let p = ActiveParams {
        n1: d.n1,
        n2: d.n2,
        k1: d.k1,
        k2: d.k2,
        mu: a.mu,
        sigma: d.sigma,
        budget: a.budget,
        delta: a.delta,
        variant: match a.variant {
            VariantArg::Proof => Variant::Proof,
            VariantArg::Box => Variant::Box,
        },
    };
    let rows: Vec<ActiveRow> = run_active_trials(&p, d.trials, d.seed)?
        .into_iter()
        .map(|t| ActiveRow {
            trial: t.trial,
            success: t.success as u8,
            est_row: t.estimate.row_start,
            est_col: t.estimate.col_start,
            spent_total: t.spent_total,
            spent_cbs: t.spent_cbs,
            spent_stage1: t.spent_scan,
            spent_search: t.spent_search,
        })
        .collect();
    write_rows(&rows, d.out.as_deref())
}

#[derive(Serialize)]
struct BoundRow {
    which: String,
    n1: usize,
    n2: usize,
    k1: usize,
    k2: usize,
    m: usize,
    sigma: f64,
    level: f64,
    value: f64,
    branch: Option<u8>,
    flag: Option<String>,
}

const GRID_KEYS: [&str; 7] = ["n1", "n2", "k1", "k2", "m", "sigma", "level"];

/// Expands a grid spec into queries. `n` and `k` set both axes to the same
/// value, so `n=16,32` gives two square sizes rather than four.
fn grid_queries(spec: &str) -> Result<Vec<BoundQuery>> {
    let mut axes: Vec<(Vec<usize>, Vec<f64>)> = vec![(vec![4], vec![100.0]), (vec![5], vec![1.0]), (vec![6], vec![0.05])];
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| Error::param(format!("grid entry '{part}' is not key=values")))?;
        let slots = match key.trim() {
            "n" => vec![0, 1],
            "k" => vec![2, 3],
            other => vec![GRID_KEYS
                .iter()
                .position(|k| *k == other)
                .ok_or_else(|| Error::param(format!("unknown grid key '{other}'")))?],
        };
        axes.retain(|(s, _)| !s.iter().any(|i| slots.contains(i)));
        axes.push((slots, parse_grid(values)?));
    }
    for (i, name) in GRID_KEYS.iter().enumerate() {
        if !axes.iter().any(|(s, _)| s.contains(&i)) {
            return Err(Error::param(format!("grid needs a value for '{name}'")));
        }
    }
    let mut combos: Vec<[f64; 7]> = vec![[0.0; 7]];
    for (slots, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut c = c;
                    for &i in slots {
                        c[i] = v;
                    }
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|c| {
            let int = |v: f64| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::param(format!("grid value {v} must be a non-negative integer")))
                }
            };
            let q = BoundQuery::new(int(c[0])?, int(c[1])?, int(c[2])?, int(c[3])?, int(c[4])?, c[5], c[6]);
            q.validate()?;
            Ok(q)
        })
        .collect()
}

fn bounds(a: BoundsArgs) -> Result<()> {
    let which = a.which.iter().map(|w| w.parse::<Which>()).collect::<Result<Vec<_>>>()?;
    let queries = grid_queries(&a.grid)?;
    let mut rows = Vec::new();
    for w in &which {
        for q in &queries {
            let b = w.evaluate(q, a.c);
            rows.push(BoundRow {
                which: w.to_string(),
                n1: q.n1,
                n2: q.n2,
                k1: q.k1,
                k2: q.k2,
                m: q.m,
                sigma: q.sigma,
                level: q.level,
                value: b.value,
                branch: b.branch,
                flag: b.flag.map(|f| format!("{f:?}").to_lowercase()),
            });
        }
    }
    write_rows(&rows, a.out.as_deref())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut config = ConfigMap::load(&a.config)?;
    if let Some(mode) = &a.mode {
        config.set("mode", mode.as_str());
    }
    if let Some(t) = a.trials {
        config.set("trials", t.to_string());
    }
    if let Some(s) = a.seed {
        config.set("seed", s.to_string());
    }
    for pair in &a.set {
        config.set_pair(pair)?;
    }
    let threads = match a.threads {
        Some(t) => Some(t),
        None => config.parsed::<usize>("threads")?,
    };
    let spec = SweepSpec::from_config(&config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    let result = pool.install(|| run_sweep(&spec))?;
    emit_csv(&result, &a.out_csv)?;
    if let Some(svg) = &a.out_svg {
        emit_svg(&result, svg)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Detect(a) => detect(a),
        Command::LocalizePassive(a) => localize_passive(a),
        Command::LocalizeActive(a) => localize_active(a),
        Command::Bounds(a) => bounds(a),
        Command::Sweep(a) => sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
