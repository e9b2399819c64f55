//! Bracketing root search for spectral functions with simple poles.
//!
//! A G-function `G(x)` is meromorphic in `x` with poles on known baselines
//! `b`. The scanner works with `F(x) = G(x) · Π (x − b)` over the baselines
//! in the scan window, which is analytic there: its sign changes are zeros
//! of `G` or baselines where the pole is lifted. Only the sign of `F` and
//! `ln |F|` are ever formed, so nothing overflows.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Sign and log-magnitude of the pole-compensated function at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub sign: f64,
    pub log_abs: f64,
}

/// A spectral function that can be sampled away from its poles.
pub trait SpectralFunction: Sync {
    /// Raw sample of `G` at `x`: `(sign(G), ln |G|)`.
    ///
    /// Must fail with [`Error::PoleProximity`] too close to a pole.
    fn eval_raw(&self, x: f64) -> Result<(f64, f64)>;

    /// Pole positions in `[lo, hi]`.
    fn poles(&self, lo: f64, hi: f64) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub step: f64,
    /// Bisection stops once the bracket is narrower than this.
    pub x_tol: f64,
    /// Number of times a suspicious cell may be halved.
    pub max_halvings: u32,
    /// Minimum drop of `ln |F|` from the cell ends to the refined root.
    pub min_log_drop: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { step: 0.01, x_tol: 1e-10, max_halvings: 6, min_log_drop: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootKind {
    /// Isolated zero of `G` away from every pole.
    Simple,
    /// Bracket collapsed onto the pole at this position with `|F|`
    /// decreasing: the pole is lifted there.
    AtPole(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub bracket: (f64, f64),
    pub kind: RootKind,
    /// `ln |F|` at the cell ends minus `ln |F|` at the refined root.
    pub log_drop: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanReport {
    pub roots: Vec<Root>,
    pub warnings: Vec<String>,
}

/// Pole-compensated evaluator built on a [`SpectralFunction`].
struct Compensated<'a, F: SpectralFunction> {
    f: &'a F,
    poles: Vec<f64>,
}

impl<F: SpectralFunction> Compensated<'_, F> {
    fn sample(&self, x: f64) -> Result<Sample> {
        let (sign, log_abs) = self.f.eval_raw(x)?;
        let mut s = sign;
        let mut l = log_abs;
        for &b in &self.poles {
            s *= (x - b).signum();
            l += (x - b).abs().ln();
        }
        Ok(Sample { x, sign: s, log_abs: l })
    }
}

fn pole_of(err: &Error) -> Option<f64> {
    match err {
        Error::PoleProximity { baseline, .. } => Some(*baseline),
        _ => None,
    }
}

/// Finds all sign changes of the compensated function in `[lo, hi]`.
pub fn find_roots<F: SpectralFunction>(f: &F, lo: f64, hi: f64, opts: &ScanOptions) -> ScanReport {
    let mut report = ScanReport::default();
    if !(lo < hi) {
        return report;
    }
    let comp = Compensated { f, poles: f.poles(lo, hi) };
    let n = ((hi - lo) / opts.step).ceil().max(1.0) as usize;
    let grid: Vec<f64> = (0..=n).map(|i| (lo + i as f64 * opts.step).min(hi)).collect();
    let samples = sample_grid(&comp, &grid, (lo, hi), &mut report.warnings);

    let mut brackets = Vec::new();
    collect_brackets(&comp, &samples, opts, opts.max_halvings, &mut brackets, &mut report.warnings);

    let refined: Vec<Result<Option<Root>, String>> = brackets
        .par_iter()
        .map(|&(a, b)| refine(&comp, a, b, opts))
        .collect();
    for r in refined {
        match r {
            Ok(Some(root)) => report.roots.push(root),
            Ok(None) => {}
            Err(w) => report.warnings.push(w),
        }
    }
    report.roots.sort_by(|a, b| a.x.total_cmp(&b.x));
    report
}

fn sample_grid<F: SpectralFunction>(
    comp: &Compensated<'_, F>,
    grid: &[f64],
    bounds: (f64, f64),
    warnings: &mut Vec<String>,
) -> Vec<Sample> {
    let (lo, hi) = bounds;
    let results: Vec<Vec<Result<Sample>>> = grid
        .par_iter()
        .map(|&x| match comp.sample(x) {
            // a window edge on a pole: step inside, just past the guard zone,
            // so the last cell still reaches the pole
            Err(Error::PoleProximity { baseline, guard, .. }) if x == lo || x == hi => {
                [baseline - 1.5 * guard, baseline + 1.5 * guard]
                    .into_iter()
                    .filter(|y| *y > lo && *y < hi)
                    .map(|y| comp.sample(y))
                    .collect()
            }
            r => vec![r],
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results.into_iter().flatten() {
        match r {
            Ok(s) => out.push(s),
            Err(Error::PoleProximity { .. }) => {}
            Err(e) => warnings.push(format!("unevaluable grid point: {e}")),
        }
    }
    out.dedup_by(|b, a| a.x == b.x);
    out
}

fn collect_brackets<F: SpectralFunction>(
    comp: &Compensated<'_, F>,
    samples: &[Sample],
    opts: &ScanOptions,
    halvings_left: u32,
    out: &mut Vec<(Sample, Sample)>,
    warnings: &mut Vec<String>,
) {
    let mut i = 0;
    while i + 1 < samples.len() {
        let (a, b) = (samples[i], samples[i + 1]);
        if a.sign == 0.0 {
            out.push((a, a));
        } else if a.sign != b.sign && b.sign != 0.0 {
            out.push((a, b));
        }
        // A dip in |F| without a sign change may hide two close roots.
        if i + 2 < samples.len() {
            let c = samples[i + 2];
            if a.sign == b.sign
                && b.sign == c.sign
                && b.log_abs < a.log_abs
                && b.log_abs < c.log_abs
                && halvings_left > 0
            {
                let width = (c.x - a.x) / 4.0;
                let fine: Vec<f64> = (1..4).map(|k| a.x + k as f64 * width).collect();
                let mut sub = vec![a];
                sub.extend(sample_grid(comp, &fine, (a.x, c.x), warnings));
                sub.push(c);
                let before = out.len();
                collect_brackets(comp, &sub, opts, halvings_left - 1, out, warnings);
                if out.len() > before {
                    // sign changes found inside; skip the coarse cells they cover
                    i += 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    if let Some(last) = samples.last() {
        if last.sign == 0.0 && samples.len() > 1 {
            out.push((*last, *last));
        }
    }
    out.dedup_by(|b, a| a.0.x == b.0.x && a.1.x == b.1.x);
}

fn refine<F: SpectralFunction>(
    comp: &Compensated<'_, F>,
    a: Sample,
    b: Sample,
    opts: &ScanOptions,
) -> Result<Option<Root>, String> {
    let ends = a.log_abs.min(b.log_abs);
    if a.sign == 0.0 {
        return Ok(Some(Root {
            x: a.x,
            bracket: (a.x, a.x),
            kind: RootKind::Simple,
            log_drop: f64::INFINITY,
        }));
    }
    let (mut lo, mut hi) = if a.x < b.x { (a, b) } else { (b, a) };
    let mut pole: Option<f64> = None;
    let mut guard = 0.0f64;
    while hi.x - lo.x > opts.x_tol {
        let mut mid = 0.5 * (lo.x + hi.x);
        if mid <= lo.x || mid >= hi.x {
            break;
        }
        let s = match comp.sample(mid) {
            Ok(s) => s,
            Err(e) => {
                let Some(p) = pole_of(&e) else {
                    return Err(format!("bisection aborted at x = {mid}: {e}"));
                };
                if let Error::PoleProximity { guard: g, .. } = e {
                    guard = g;
                }
                pole = Some(p);
                // step just outside the guard zone on the wider side
                let left = p - 1.5 * guard;
                let right = p + 1.5 * guard;
                mid = if left > lo.x && (left - lo.x) >= (hi.x - right) {
                    left
                } else if right < hi.x {
                    right
                } else if left > lo.x {
                    left
                } else {
                    break;
                };
                match comp.sample(mid) {
                    Ok(s) => s,
                    Err(_) => break,
                }
            }
        };
        if s.sign == 0.0 {
            lo = s;
            hi = s;
            break;
        }
        if s.sign == lo.sign {
            lo = s;
        } else {
            hi = s;
        }
    }

    let at_pole = pole.filter(|p| lo.x <= *p && *p <= hi.x && hi.x - lo.x > opts.x_tol);
    let best = if lo.log_abs < hi.log_abs { lo } else { hi };
    let drop = ends - best.log_abs;
    match at_pole {
        Some(p) => {
            if drop >= opts.min_log_drop.min(1.0) {
                Ok(Some(Root { x: p, bracket: (lo.x, hi.x), kind: RootKind::AtPole(p), log_drop: drop }))
            } else {
                Err(format!(
                    "sign change at pole x = {p} without decreasing magnitude (ln-drop {drop:.2}); discarded"
                ))
            }
        }
        None => {
            let x = 0.5 * (lo.x + hi.x);
            if drop >= opts.min_log_drop {
                Ok(Some(Root { x, bracket: (lo.x, hi.x), kind: RootKind::Simple, log_drop: drop }))
            } else {
                Err(format!(
                    "sign change near x = {x} with magnitude drop {drop:.2} below threshold; treated as pole crossing"
                ))
            }
        }
    }
}
