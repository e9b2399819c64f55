//! Command-line front end: configuration, tables and atomic output.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::degeneracy::{joint_search, DegeneracyCandidate, SearchOptions};
use crate::error::Error;
use crate::gfunction::{connection_matrix, default_z0};
use crate::model::{baselines, BaselineKind, ModelParams, Parity};
use crate::oracle::{build_truncated, spectrum_oracle, HamiltonianKind, OracleOptions};
use crate::rabi::{rabi_g_value, rabi_roots, rabi_sweep, RabiOptions};
use crate::roots::ScanOptions;
use crate::series::{OrderPolicy, SeriesOptions};
use crate::spectrum::{find_roots, g_grid, match_values, sweep_g, Eigenvalue, RootOptions, SweepOptions, XWindow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable selecting the worker-thread count.
pub const THREADS_ENV: &str = "DICKE3_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("computation: {0}")]
    Compute(#[from] Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Compute(_) => EXIT_COMPUTE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dicke3", version, about = "Spectrum of the spin-3/2 Dicke model")]
pub struct Cli {
    /// key=value file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the G-function over x.
    Gfunc(Common),
    /// Regular and exceptional roots in an x window.
    Spectrum(Common),
    /// Coupling sweep of both parity ladders.
    Sweep(Common),
    /// Truncated-Fock eigenvalues with certification deltas.
    Oracle(Common),
    /// Analytic roots against the oracle.
    Compare(Common),
    /// Same-parity degeneracy search.
    Degeneracy(Common),
    /// The spin-1/2 analog.
    Rabi(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// plus, minus or both.
    #[arg(long)]
    pub parity: Option<String>,
    /// lo:hi or lo:hi:step.
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub x_lo: Option<f64>,
    #[arg(long)]
    pub x_hi: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub z0: Option<f64>,
    /// adaptive, adaptive:TOL or fixed:N.
    #[arg(long)]
    pub order: Option<String>,
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Hamiltonian for `oracle` (plus, minus, sb32, rabi, rabi+, rabi-, full).
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub certify: Option<bool>,
    #[arg(long)]
    pub g_lo: Option<f64>,
    #[arg(long)]
    pub g_hi: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    /// Grid for `degeneracy`: NX:NG.
    #[arg(long)]
    pub grid: Option<String>,
    /// `rabi` output: gfunc, spectrum or sweep.
    #[arg(long)]
    pub what: Option<String>,
    /// Output stem; tables go to `<stem>.csv` / `<stem>.json`. Stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv, json or both.
    #[arg(long)]
    pub format: Option<String>,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub g: f64,
    pub delta: f64,
    pub parities: Vec<Parity>,
    pub x_lo: f64,
    pub x_hi: f64,
    pub step: f64,
    pub z0: Option<f64>,
    pub policy: OrderPolicy,
    pub cutoff: usize,
    pub k: usize,
    pub kind: Option<String>,
    pub certify: bool,
    pub g_lo: f64,
    pub g_hi: f64,
    pub steps: usize,
    pub levels: usize,
    pub grid: (usize, usize),
    pub what: String,
    pub out: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

const KEYS: &[&str] = &[
    "g", "delta", "parity", "x", "x_lo", "x_hi", "step", "z0", "order", "cutoff", "k", "kind",
    "certify", "g_lo", "g_hi", "steps", "levels", "grid", "what", "out", "format",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("line {}: unknown key `{key}`", i + 1)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

struct Resolver<'a> {
    file: &'a BTreeMap<String, String>,
}

impl Resolver<'_> {
    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("field `{key}`: cannot parse `{v}`"))),
        }
    }
}

fn parse_range(key: &str, s: &str) -> CliResult<(f64, f64, Option<f64>)> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Config(format!("field `{key}`: bad number `{t}`")))
    };
    match parts.as_slice() {
        [a, b] => Ok((num(a)?, num(b)?, None)),
        [a, b, c] => Ok((num(a)?, num(b)?, Some(num(c)?))),
        _ => Err(CliError::Config(format!("field `{key}`: expected lo:hi[:step], got `{s}`"))),
    }
}

fn parse_policy(s: &str) -> CliResult<OrderPolicy> {
    let bad = || CliError::Config(format!("field `order`: expected adaptive[:TOL] or fixed:N, got `{s}`"));
    match s.split_once(':') {
        None if s == "adaptive" => Ok(SeriesOptions::default().policy),
        Some(("adaptive", t)) => Ok(OrderPolicy::Adaptive { tol: t.parse().map_err(|_| bad())? }),
        Some(("fixed", n)) => Ok(OrderPolicy::Fixed(n.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn parse_parities(s: &str) -> CliResult<Vec<Parity>> {
    match s {
        "both" => Ok(Parity::BOTH.to_vec()),
        other => other
            .parse::<Parity>()
            .map(|p| vec![p])
            .map_err(|_| CliError::Config(format!("field `parity`: expected plus, minus or both, got `{other}`"))),
    }
}

/// Merges flags over the config file and validates the result.
pub fn resolve(command: &str, flags: &Common, file: &BTreeMap<String, String>) -> CliResult<RunConfig> {
    let r = Resolver { file };
    let g = r.get("g", flags.g)?.unwrap_or(0.25);
    let delta = r.get("delta", flags.delta)?.unwrap_or(0.7);
    let parities = parse_parities(&r.get("parity", flags.parity.clone())?.unwrap_or_else(|| "both".into()))?;
    let mut x_lo = -0.4;
    let mut x_hi = 6.0;
    let mut step = if command == "gfunc" { 0.005 } else { 0.01 };
    if let Some(x) = r.get::<String>("x", flags.x.clone())? {
        let (a, b, s) = parse_range("x", &x)?;
        x_lo = a;
        x_hi = b;
        if let Some(s) = s {
            step = s;
        }
    }
    x_lo = r.get("x_lo", flags.x_lo)?.unwrap_or(x_lo);
    x_hi = r.get("x_hi", flags.x_hi)?.unwrap_or(x_hi);
    step = r.get("step", flags.step)?.unwrap_or(step);
    let z0 = r.get("z0", flags.z0)?;
    let policy = match r.get::<String>("order", flags.order.clone())? {
        Some(s) => parse_policy(&s)?,
        None => SeriesOptions::default().policy,
    };
    let cutoff = r.get("cutoff", flags.cutoff)?.unwrap_or(80);
    let k = r.get("k", flags.k)?.unwrap_or(12);
    let kind = r.get("kind", flags.kind.clone())?;
    let certify = r.get("certify", flags.certify)?.unwrap_or(true);
    let g_lo = r.get("g_lo", flags.g_lo)?.unwrap_or(0.05);
    let g_hi = r.get("g_hi", flags.g_hi)?.unwrap_or(1.2);
    let steps = r.get("steps", flags.steps)?.unwrap_or(100);
    let levels = r.get("levels", flags.levels)?.unwrap_or(10);
    let grid = match r.get::<String>("grid", flags.grid.clone())? {
        Some(s) => {
            let (a, b) = s
                .split_once(':')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| CliError::Config(format!("field `grid`: expected NX:NG, got `{s}`")))?;
            (a, b)
        }
        None => SearchOptions::default().grid,
    };
    let what = r.get("what", flags.what.clone())?.unwrap_or_else(|| "spectrum".into());
    let out = r.get::<String>("out", flags.out.as_ref().map(|p| p.display().to_string()))?.map(PathBuf::from);
    let format = match r.get::<String>("format", flags.format.clone())?.as_deref() {
        None | Some("both") => Format::Both,
        Some("csv") => Format::Csv,
        Some("json") => Format::Json,
        Some(other) => return Err(CliError::Config(format!("field `format`: unknown `{other}`"))),
    };

    let cfg = RunConfig {
        command: command.to_string(),
        g,
        delta,
        parities,
        x_lo,
        x_hi,
        step,
        z0,
        policy,
        cutoff,
        k,
        kind,
        certify,
        g_lo,
        g_hi,
        steps,
        levels,
        grid,
        what,
        out,
        format,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(c: &RunConfig) -> CliResult<()> {
    let bad = |field: &str, why: &str| Err(CliError::Config(format!("field `{field}`: {why}")));
    let analytic = !matches!(c.command.as_str(), "oracle");
    if !(c.g.is_finite() && c.g >= 0.0) || (analytic && c.g <= 0.0) {
        return bad("g", "must be positive and finite");
    }
    if !(c.delta.is_finite() && c.delta >= 0.0) || (analytic && c.delta <= 0.0) {
        return bad("delta", "must be positive and finite");
    }
    if !(c.x_lo.is_finite() && c.x_hi.is_finite()) || c.x_lo > c.x_hi {
        return bad("x", "need finite lo <= hi");
    }
    if !(c.step.is_finite() && c.step > 0.0) {
        return bad("step", "must be positive");
    }
    if let Some(z0) = c.z0 {
        if !(z0 > c.g && z0 < 3.0 * c.g) {
            return bad("z0", "must lie strictly between g and 3g");
        }
    }
    if c.cutoff < 1 {
        return bad("cutoff", "must be at least 1");
    }
    if c.k < 1 {
        return bad("k", "must be at least 1");
    }
    if !(c.g_lo > 0.0 && c.g_hi >= c.g_lo) || c.steps < 1 {
        return bad("g_lo", "need 0 < g_lo <= g_hi and steps >= 1");
    }
    if c.levels < 1 {
        return bad("levels", "must be at least 1");
    }
    if c.grid.0 < 2 || c.grid.1 < 2 {
        return bad("grid", "need at least 2 points per axis");
    }
    if !["gfunc", "spectrum", "sweep"].contains(&c.what.as_str()) {
        return bad("what", "expected gfunc, spectrum or sweep");
    }
    if let Some(kind) = &c.kind {
        if kind.parse::<HamiltonianKind>().is_err() {
            return bad("kind", "unknown hamiltonian kind");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(v) => fmt_float(*v),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(v) if v.is_finite() => json!(v),
            Cell::F(_) | Cell::Empty => Value::Null,
            Cell::I(v) => json!(v),
            Cell::S(s) => json!(s),
            Cell::B(b) => json!(b),
        }
    }
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &'static [&'static str]) -> Self {
        Self { name, version: 1, columns, rows: Vec::new() }
    }

    pub fn schema(&self) -> String {
        format!("{}/{}", self.name, self.version)
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells");
        format!("# schema: {}\n{body}", self.schema())
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    m.insert((*c).to_string(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        let doc = json!({ "schema": self.schema(), "columns": self.columns, "rows": rows });
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
        s.push('\n');
        s
    }
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn with_suffix(stem: &Path, suffix: &str, ext: &str) -> PathBuf {
    let mut name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.push_str(suffix);
    name.push('.');
    name.push_str(ext);
    stem.with_file_name(name)
}

/// Emits every table; the first goes to `<stem>`, the rest to `<stem>-<name>`.
fn emit(cfg: &RunConfig, tables: &[Table], stdout: &mut dyn std::io::Write) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    match &cfg.out {
        None => {
            for t in tables {
                match cfg.format {
                    Format::Json => stdout.write_all(t.to_json().as_bytes())?,
                    _ => stdout.write_all(t.to_csv().as_bytes())?,
                }
            }
        }
        Some(stem) => {
            // render everything before touching the filesystem
            let mut files = Vec::new();
            for (i, t) in tables.iter().enumerate() {
                let suffix = if i == 0 { String::new() } else { format!("-{}", t.name.rsplit('-').next().unwrap_or(t.name)) };
                if cfg.format != Format::Json {
                    files.push((with_suffix(stem, &suffix, "csv"), t.to_csv()));
                }
                if cfg.format != Format::Csv {
                    files.push((with_suffix(stem, &suffix, "json"), t.to_json()));
                }
            }
            for (path, body) in files {
                write_atomic(&path, &body)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Commands

fn series_opts(cfg: &RunConfig) -> SeriesOptions {
    SeriesOptions::default().with_policy(cfg.policy)
}

fn root_opts(cfg: &RunConfig) -> RootOptions {
    RootOptions {
        scan: ScanOptions { step: cfg.step, ..ScanOptions::default() },
        series: series_opts(cfg),
        z0: cfg.z0,
    }
}

fn x_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Distances at which every baseline is additionally sampled by `gfunc`.
pub const BASELINE_PROBE_OFFSETS: [f64; 9] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10, 1e-11, 1e-12];
const NEAR_BASELINE: f64 = 1e-3;

fn near_kind(params: &ModelParams, x: f64) -> (String, f64) {
    let near = baselines(params, x - NEAR_BASELINE, x + NEAR_BASELINE);
    let dist = baselines(params, x - 1.0, x + 1.0)
        .iter()
        .map(|b| (b.x - x).abs())
        .fold(f64::INFINITY, f64::min);
    let first = near.iter().any(|b| b.kind == BaselineKind::First);
    let second = near.iter().any(|b| b.kind == BaselineKind::Second);
    let label = match (first, second) {
        (true, true) => "both",
        (true, false) => "first",
        (false, true) => "second",
        (false, false) => "none",
    };
    (label.into(), dist)
}

fn cmd_gfunc(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let params = ModelParams::new(cfg.g, cfg.delta)?;
    let z0 = cfg.z0.unwrap_or_else(|| default_z0(&params));
    let opts = series_opts(cfg);
    // grid points, then probes next to each baseline with a tighter pole guard
    let mut xs: Vec<(f64, bool)> = x_grid(cfg.x_lo, cfg.x_hi, cfg.step).into_iter().map(|x| (x, false)).collect();
    for b in baselines(&params, cfg.x_lo, cfg.x_hi) {
        for d in BASELINE_PROBE_OFFSETS {
            xs.extend([(b.x - d, true), (b.x + d, true)]);
        }
    }
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    xs.dedup_by(|a, b| a.0 == b.0);
    let probe_opts = SeriesOptions { pole_guard: 0.1 * BASELINE_PROBE_OFFSETS[8], ..opts };
    let mut t = Table::new(
        "gfunc",
        &["x", "parity", "g_norm", "log_scale", "log_abs_g", "near_baseline_kind", "baseline_distance", "status"],
    );
    for &parity in &cfg.parities {
        let rows: Vec<Vec<Cell>> = {
            use rayon::prelude::*;
            xs.par_iter()
                .map(|&(x, probe)| {
                    let (kind, dist) = near_kind(&params, x);
                    let series = if probe { &probe_opts } else { &opts };
                    let (gn, ls, status) = match connection_matrix(&params, parity, x, z0, series) {
                        Ok(m) => {
                            let v = m.g_value();
                            (v.g_norm, v.log_scale, if probe { "probe" } else { "ok" })
                        }
                        Err(Error::PoleProximity { .. }) => (f64::NAN, f64::NAN, "pole-guard"),
                        Err(_) => (f64::NAN, f64::NAN, "error"),
                    };
                    vec![
                        Cell::F(x),
                        Cell::S(parity.symbol().into()),
                        Cell::F(gn),
                        Cell::F(ls),
                        Cell::F(gn.abs().ln() + ls),
                        Cell::S(kind),
                        Cell::F(dist),
                        Cell::S(status.into()),
                    ]
                })
                .collect()
        };
        t.rows.extend(rows);
    }
    Ok(vec![t])
}

const SPECTRUM_COLUMNS: &[&str] = &["x", "e", "parity", "class", "residual", "bracket_lo", "bracket_hi"];

fn eigen_row(e: &Eigenvalue) -> Vec<Cell> {
    vec![
        Cell::F(e.x),
        Cell::F(e.e),
        Cell::S(e.parity.symbol().into()),
        Cell::S(e.class.label().into()),
        Cell::F(e.residual),
        Cell::F(e.bracket.0),
        Cell::F(e.bracket.1),
    ]
}

fn cmd_spectrum(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let params = ModelParams::new(cfg.g, cfg.delta)?;
    let mut t = Table::new("spectrum", SPECTRUM_COLUMNS);
    for &parity in &cfg.parities {
        let scan = find_roots(&params, parity, cfg.x_lo, cfg.x_hi, &root_opts(cfg))?;
        for w in &scan.warnings {
            eprintln!("warning: {w}");
        }
        t.rows.extend(scan.eigenvalues.iter().map(eigen_row));
    }
    Ok(vec![t])
}

fn sweep_tables(
    name: (&'static str, &'static str, &'static str),
    sweep: &crate::spectrum::SpectrumSweep,
) -> Vec<Table> {
    let mut levels = Table::new(name.0, &["g", "parity", "level_index", "x", "e", "class"]);
    for (gi, &g) in sweep.g_grid.iter().enumerate() {
        for parity in Parity::BOTH {
            for (i, e) in sweep.levels_for(gi, parity).iter().enumerate() {
                levels.push(vec![
                    Cell::F(g),
                    Cell::S(parity.symbol().into()),
                    Cell::I(i as i64),
                    Cell::F(e.x),
                    Cell::F(e.e),
                    Cell::S(e.class.label().into()),
                ]);
            }
        }
    }
    let mut cross = Table::new(
        name.1,
        &["g", "x", "parity_a", "parity_b", "level_a", "level_b", "baseline_distance", "refined"],
    );
    for c in &sweep.crossings {
        cross.push(vec![
            Cell::F(c.g),
            Cell::F(c.x),
            Cell::S(c.parities.0.symbol().into()),
            Cell::S(c.parities.1.symbol().into()),
            Cell::I(c.levels.0 as i64),
            Cell::I(c.levels.1 as i64),
            Cell::F(c.baseline_distance),
            Cell::B(c.refined),
        ]);
    }
    let mut overlay = Table::new(name.2, &["g", "n", "x"]);
    for (gi, &g) in sweep.g_grid.iter().enumerate() {
        for b in &sweep.overlay[gi] {
            overlay.push(vec![Cell::F(g), Cell::I(b.n as i64), Cell::F(b.x)]);
        }
    }
    vec![levels, cross, overlay]
}

fn sweep_opts(cfg: &RunConfig) -> SweepOptions {
    SweepOptions { window: XWindow::Lowest { levels: cfg.levels }, ..SweepOptions::default() }
}

fn cmd_sweep(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let sweep = sweep_g(cfg.delta, cfg.g_lo, cfg.g_hi, cfg.steps, &root_opts(cfg), &sweep_opts(cfg))?;
    for f in &sweep.flags {
        eprintln!("flag: {f}");
    }
    eprintln!(
        "min same-parity gap: {}; ambiguous continuation steps: {}",
        fmt_float(sweep.min_same_parity_gap),
        sweep.ambiguous_steps
    );
    Ok(sweep_tables(("sweep", "sweep-crossings", "sweep-baselines"), &sweep))
}

fn oracle_kinds(cfg: &RunConfig) -> CliResult<Vec<HamiltonianKind>> {
    match &cfg.kind {
        Some(k) => Ok(vec![k.parse().map_err(|e: Error| CliError::Config(format!("field `kind`: {e}")))?]),
        None => Ok(cfg.parities.iter().map(|p| HamiltonianKind::ParityBlock(*p)).collect()),
    }
}

fn cmd_oracle(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let params = ModelParams::new(cfg.g, cfg.delta)?;
    let mut t = Table::new("oracle", &["kind", "index", "energy", "x", "delta", "cutoff", "cutoff_check"]);
    for kind in oracle_kinds(cfg)? {
        let label = kind.label();
        let h = build_truncated(&params, kind, cfg.cutoff)?;
        let s = spectrum_oracle(&h, cfg.k, cfg.certify, &OracleOptions::default())?;
        for (i, e) in s.eigenvalues.iter().enumerate() {
            t.push(vec![
                Cell::S(label.clone()),
                Cell::I(i as i64),
                Cell::F(*e),
                Cell::F(params.to_x(*e)),
                s.deltas.get(i).map_or(Cell::Empty, |d| Cell::F(*d)),
                Cell::I(s.cutoff_pair.0 as i64),
                Cell::I(s.cutoff_pair.1 as i64),
            ]);
        }
    }
    Ok(vec![t])
}

fn cmd_compare(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let params = ModelParams::new(cfg.g, cfg.delta)?;
    let mut t = Table::new("compare", &["parity", "root_x", "oracle_x", "deviation", "max_deviation"]);
    for &parity in &cfg.parities {
        let h = build_truncated(&params, HamiltonianKind::ParityBlock(parity), cfg.cutoff)?;
        let s = spectrum_oracle(&h, cfg.k + 1, cfg.certify, &OracleOptions::default())?;
        let xs = s.x_values(&params);
        let hi = 0.5 * (xs[cfg.k - 1] + xs[cfg.k]);
        let lo = xs[0].min(-8.0 * cfg.g * cfg.g - 3.0 * cfg.delta) - 0.05;
        let reference = &xs[..cfg.k];
        let scan = find_roots(&params, parity, lo, hi, &root_opts(cfg))?;
        let roots: Vec<f64> = scan.eigenvalues.iter().map(|e| e.x).collect();
        let m = match_values(&roots, reference, 1e-4);
        for (r, o) in &m.pairs {
            t.push(vec![
                Cell::S(parity.symbol().into()),
                Cell::F(*r),
                Cell::F(*o),
                Cell::F((r - o).abs()),
                Cell::F(m.max_deviation),
            ]);
        }
        for r in &m.unmatched_roots {
            t.push(vec![Cell::S(parity.symbol().into()), Cell::F(*r), Cell::Empty, Cell::Empty, Cell::F(m.max_deviation)]);
        }
        for o in &m.unmatched_reference {
            t.push(vec![Cell::S(parity.symbol().into()), Cell::Empty, Cell::F(*o), Cell::Empty, Cell::F(m.max_deviation)]);
        }
        eprintln!(
            "parity {parity}: {} matched, max deviation {}, {} unmatched roots, {} unmatched oracle values",
            m.pairs.len(),
            fmt_float(m.max_deviation),
            m.unmatched_roots.len(),
            m.unmatched_reference.len()
        );
    }
    Ok(vec![t])
}

fn candidate_row(status: &str, c: &DegeneracyCandidate) -> Vec<Cell> {
    vec![
        Cell::S(status.into()),
        Cell::F(c.x),
        Cell::F(c.g),
        Cell::F(c.delta),
        Cell::S(c.parity.symbol().into()),
        Cell::F(c.det_value),
        Cell::F(c.c1_value),
        Cell::I(c.kernel_dim as i64),
        Cell::B(c.newton_converged),
        Cell::I(c.iterations as i64),
        Cell::F(c.smallest_singular_values[0]),
        Cell::F(c.smallest_singular_values[1]),
    ]
}

fn cmd_degeneracy(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let mut t = Table::new(
        "degeneracy",
        &["status", "x", "g", "delta", "parity", "det", "c1", "kernel_dim", "converged", "iterations", "sv_min", "sv_next"],
    );
    let opts = SearchOptions { grid: cfg.grid, ..SearchOptions::default() };
    for &parity in &cfg.parities {
        let r = joint_search(cfg.delta, parity, (cfg.g_lo, cfg.g_hi), (cfg.x_lo, cfg.x_hi), &opts)?;
        eprintln!(
            "parity {parity}: {} seeds, {} confirmed, {} near misses, {} cells skipped",
            r.seeds,
            r.confirmed.len(),
            r.near_misses.len(),
            r.skipped_cells
        );
        t.rows.extend(r.confirmed.iter().map(|c| candidate_row("confirmed", c)));
        t.rows.extend(r.near_misses.iter().map(|c| candidate_row("near-miss", c)));
    }
    Ok(vec![t])
}

fn cmd_rabi(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let opts = RabiOptions::default();
    match cfg.what.as_str() {
        "gfunc" => {
            let params = ModelParams::new(cfg.g, cfg.delta)?;
            let mut t = Table::new("rabi-gfunc", &["x", "g_plus", "g_minus", "status"]);
            for x in x_grid(cfg.x_lo, cfg.x_hi, cfg.step) {
                let gp = rabi_g_value(&params, Parity::Plus, x, &opts);
                let gm = rabi_g_value(&params, Parity::Minus, x, &opts);
                match (gp, gm) {
                    (Ok(a), Ok(b)) => t.push(vec![Cell::F(x), Cell::F(a), Cell::F(b), Cell::S("ok".into())]),
                    _ => t.push(vec![Cell::F(x), Cell::F(f64::NAN), Cell::F(f64::NAN), Cell::S("pole-guard".into())]),
                }
            }
            Ok(vec![t])
        }
        "spectrum" => {
            let params = ModelParams::new(cfg.g, cfg.delta)?;
            let mut t = Table::new("rabi-spectrum", SPECTRUM_COLUMNS);
            let scan_opts = ScanOptions { step: cfg.step, ..ScanOptions::default() };
            for &parity in &cfg.parities {
                let scan = rabi_roots(&params, parity, cfg.x_lo, cfg.x_hi, &scan_opts, &opts)?;
                t.rows.extend(scan.eigenvalues.iter().map(eigen_row));
            }
            Ok(vec![t])
        }
        _ => {
            let grid = g_grid(cfg.g_lo, cfg.g_hi, cfg.steps)?;
            let r = rabi_sweep(cfg.delta, &grid, &sweep_opts(cfg))?;
            let mut tables = sweep_tables(("rabi-sweep", "rabi-sweep-crossings", "rabi-sweep-baselines"), &r.sweep);
            let mut deg = Table::new("rabi-degeneracies", &["g", "x", "integer_distance"]);
            for d in &r.degeneracies {
                deg.push(vec![Cell::F(d.g), Cell::F(d.x), Cell::F(d.integer_distance)]);
            }
            tables.insert(1, deg);
            Ok(tables)
        }
    }
}

/// Runs a resolved configuration and writes its tables.
pub fn run(cfg: &RunConfig, stdout: &mut dyn std::io::Write) -> CliResult<Vec<PathBuf>> {
    let tables = match cfg.command.as_str() {
        "gfunc" => cmd_gfunc(cfg)?,
        "spectrum" => cmd_spectrum(cfg)?,
        "sweep" => cmd_sweep(cfg)?,
        "oracle" => cmd_oracle(cfg)?,
        "compare" => cmd_compare(cfg)?,
        "degeneracy" => cmd_degeneracy(cfg)?,
        "rabi" => cmd_rabi(cfg)?,
        other => return Err(CliError::Config(format!("unknown command `{other}`"))),
    };
    emit(cfg, &tables, stdout)
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}: expected a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))?;
    }
    Ok(())
}

fn split(cli: Cli) -> (&'static str, Common, Option<PathBuf>) {
    let (name, common) = match cli.command {
        Command::Gfunc(c) => ("gfunc", c),
        Command::Spectrum(c) => ("spectrum", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Oracle(c) => ("oracle", c),
        Command::Compare(c) => ("compare", c),
        Command::Degeneracy(c) => ("degeneracy", c),
        Command::Rabi(c) => ("rabi", c),
    };
    (name, common, cli.config)
}

/// Entry point shared by the binary and the tests; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = (|| {
        configure_threads()?;
        let (name, common, config) = split(cli);
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let cfg = resolve(name, &common, &file)?;
        run(&cfg, &mut std::io::stdout().lock())
    })();
    match result {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let m = parse_config("g = 0.3 # coupling\n\nx-lo=0.1\n").unwrap();
        assert_eq!(m["g"], "0.3");
        assert_eq!(m["x_lo"], "0.1");
        assert!(matches!(parse_config("nonsense"), Err(CliError::Config(_))));
        assert!(matches!(parse_config("colour=red"), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_override_file() {
        let file = parse_config("g=0.3\ndelta=0.5\n").unwrap();
        let flags = Common { g: Some(0.4), ..Default::default() };
        let cfg = resolve("spectrum", &flags, &file).unwrap();
        assert_eq!(cfg.g, 0.4);
        assert_eq!(cfg.delta, 0.5);
    }

    #[test]
    fn bad_field_is_named() {
        let file = parse_config("delta=abc\n").unwrap();
        let err = resolve("spectrum", &Common::default(), &file).unwrap_err();
        assert!(err.to_string().contains("delta"));
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("x", "0:6:0.005").unwrap(), (0.0, 6.0, Some(0.005)));
        assert_eq!(parse_range("x", "-1:2").unwrap(), (-1.0, 2.0, None));
        assert!(parse_range("x", "1").is_err());
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_float(f64::NAN), "nan");
    }

    #[test]
    fn z0_outside_matching_window_rejected() {
        let flags = Common { g: Some(0.25), z0: Some(0.9), ..Default::default() };
        assert!(resolve("gfunc", &flags, &BTreeMap::new()).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, "x\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
