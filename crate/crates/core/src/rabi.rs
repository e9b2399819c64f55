//! Spin-1/2 (Rabi) G-function on the same root-finding machinery.
//!
//! In each parity chain the Bargmann equations read
//!
//! ```text
//! (z − g) φ′ − (E + gz) φ + sΔ φ̄ = 0
//! (z + g) φ̄′ − (E − gz) φ̄ + sΔ φ = 0
//! ```
//!
//! with `φ̄(z) = φ(−z)`. Expanding around `z = g` in `w = z − g` with
//! `φ = Σ αₙ wⁿ`, `φ̄ = Σ βₙ wⁿ` and `α₀ = 1` gives
//! `β₀ = s·x/Δ`,
//! `βₙ₊₁ = [(x − 2g² − n)βₙ − gβₙ₋₁ − sΔαₙ] / (2g(n + 1))` and
//! `αₙ₊₁ = (sΔβₙ₊₁ − gαₙ) / (x − n − 1)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Baseline, BaselineKind, ModelParams, Parity};
use crate::roots::{self, ScanOptions, SpectralFunction};
use crate::spectrum::{
    self, to_eigenvalues, EigenClass, LevelSource, RootScan, SpectrumSweep, SweepOptions,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiOptions {
    pub pole_guard: f64,
    pub tol: f64,
    pub max_order: usize,
    /// Evaluation radius around `z = g` in units of `g`; `G` needs 1.
    pub reach: f64,
}

impl Default for RabiOptions {
    fn default() -> Self {
        Self { pole_guard: 1e-6, tol: 1e-17, max_order: 4000, reach: 1.0 }
    }
}

/// Series of `(φ, φ̄)` around `z = g` for one parity.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiSeries {
    pub x: f64,
    pub parity: Parity,
    pub g: f64,
    pub reach: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

fn check_pole(x: f64, guard: f64) -> Result<()> {
    let n = x.round();
    if n >= 1.0 && (x - n).abs() < guard {
        return Err(Error::PoleProximity { x, baseline: n, kind: BaselineKind::First, guard });
    }
    Ok(())
}

impl RabiSeries {
    pub fn new(params: &ModelParams, parity: Parity, x: f64, opts: &RabiOptions) -> Result<Self> {
        params.require_analytic()?;
        check_pole(x, opts.pole_guard)?;
        let (g, delta) = (params.g(), params.delta());
        let s = parity.sign();
        let reach = opts.reach.clamp(f64::MIN_POSITIVE, 1.9) * g;
        let mut alpha = vec![1.0];
        let mut beta = vec![s * x / delta];
        let mut peak = 1f64.max(beta[0].abs());
        let mut quiet = 0;
        let mut n = 0usize;
        loop {
            let nf = n as f64;
            let bm1 = if n == 0 { 0.0 } else { beta[n - 1] };
            let b = ((x - 2.0 * g * g - nf) * beta[n] - g * bm1 - s * delta * alpha[n])
                / (2.0 * g * (nf + 1.0));
            let a = (s * delta * b - g * alpha[n]) / (x - nf - 1.0);
            beta.push(b);
            alpha.push(a);
            n += 1;
            let w = reach.powi(n as i32);
            let size = a.abs().max(b.abs()) * w;
            if !size.is_finite() {
                return Err(Error::NonConvergence { max_order: n });
            }
            peak = peak.max(size);
            quiet = if size <= opts.tol * peak { quiet + 1 } else { 0 };
            if n >= 8 && quiet >= 4 && nf + 1.0 > x {
                break;
            }
            if n >= opts.max_order {
                return Err(Error::NonConvergence { max_order: opts.max_order });
            }
        }
        Ok(Self { x, parity, g, reach, alpha, beta })
    }

    /// `(φ, φ′, φ̄, φ̄′)` at `z`, valid for `|z − g|` up to the reach.
    pub fn eval(&self, z: f64) -> Result<[f64; 4]> {
        let w = z - self.g;
        if w.abs() > self.reach * (1.0 + 1e-12) {
            return Err(Error::OutsideDisk { z, center: self.g, radius: self.reach });
        }
        let horner = |c: &[f64]| {
            let mut v = 0.0;
            let mut d = 0.0;
            for (k, ck) in c.iter().enumerate().rev() {
                v = v * w + ck;
                if k > 0 {
                    d = d * w + k as f64 * ck;
                }
            }
            (v, d)
        };
        let (p, dp) = horner(&self.alpha);
        let (q, dq) = horner(&self.beta);
        Ok([p, dp, q, dq])
    }

    /// Residuals of both equations at `z`, relative to their term sizes.
    pub fn ode_residual(&self, params: &ModelParams, z: f64) -> Result<[f64; 2]> {
        let [p, dp, q, dq] = self.eval(z)?;
        let (g, delta) = (params.g(), params.delta());
        let e = params.to_energy(self.x);
        let s = self.parity.sign();
        let t1 = [(z - g) * dp, -(e + g * z) * p, s * delta * q];
        let t2 = [(z + g) * dq, -(e - g * z) * q, s * delta * p];
        let rel = |t: [f64; 3]| {
            let scale: f64 = t.iter().map(|v| v.abs()).sum();
            if scale > 0.0 {
                t.iter().sum::<f64>().abs() / scale
            } else {
                0.0
            }
        };
        Ok([rel(t1), rel(t2)])
    }
}

/// `(φ(0), φ̄(0))` for the given parity.
pub fn rabi_values_at_zero(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    opts: &RabiOptions,
) -> Result<(f64, f64)> {
    let series = RabiSeries::new(params, parity, x, opts)?;
    let [p, _, q, _] = series.eval(0.0)?;
    Ok((p, q))
}

/// `G^R±(x) = φ̄±(x, 0) − φ±(x, 0)`.
pub fn rabi_g_value(params: &ModelParams, parity: Parity, x: f64, opts: &RabiOptions) -> Result<f64> {
    let (p, q) = rabi_values_at_zero(params, parity, x, opts)?;
    Ok(q - p)
}

/// Rabi G-function with poles at the positive integers.
pub struct RabiG {
    pub params: ModelParams,
    pub parity: Parity,
    pub opts: RabiOptions,
}

impl SpectralFunction for RabiG {
    fn eval_raw(&self, x: f64) -> Result<(f64, f64)> {
        let v = rabi_g_value(&self.params, self.parity, x, &self.opts)?;
        Ok((v.signum() * (v != 0.0) as i32 as f64, v.abs().ln()))
    }

    fn poles(&self, lo: f64, hi: f64) -> Vec<f64> {
        let first = lo.ceil().max(1.0) as i64;
        let last = hi.floor() as i64;
        (first..=last).map(|n| n as f64).collect()
    }
}

/// Integer baselines `x = n ≥ 1` in `[lo, hi]`.
pub fn rabi_baselines(lo: f64, hi: f64) -> Vec<Baseline> {
    let first = lo.ceil().max(1.0) as i64;
    let last = hi.floor() as i64;
    (first..=last)
        .map(|n| Baseline { kind: BaselineKind::First, n: n as u32, x: n as f64, collides: false })
        .collect()
}

/// Regular and lifted-baseline roots of `G^R±` in `[x_lo, x_hi]`.
pub fn rabi_roots(
    params: &ModelParams,
    parity: Parity,
    x_lo: f64,
    x_hi: f64,
    scan: &ScanOptions,
    opts: &RabiOptions,
) -> Result<RootScan> {
    params.require_analytic()?;
    if !(x_lo < x_hi) {
        return Ok(RootScan::default());
    }
    let f = RabiG { params: *params, parity, opts: *opts };
    let report = roots::find_roots(&f, x_lo, x_hi, scan);
    Ok(to_eigenvalues(
        params,
        parity,
        report,
        |_| EigenClass::ExceptionalFirstKind,
        |x| {
            rabi_values_at_zero(params, parity, x, opts)
                .map(|(p, q)| (q - p).abs() / p.abs().max(q.abs()).max(f64::MIN_POSITIVE))
                .unwrap_or(f64::NAN)
        },
    ))
}

pub struct RabiLevels {
    pub delta: f64,
    pub scan: ScanOptions,
    pub opts: RabiOptions,
}

impl LevelSource for RabiLevels {
    fn roots(&self, g: f64, parity: Parity, lo: f64, hi: f64, x_tol: f64) -> Result<RootScan> {
        let params = ModelParams::new(g, self.delta)?;
        let scan = ScanOptions { x_tol, ..self.scan };
        rabi_roots(&params, parity, lo, hi, &scan, &self.opts)
    }

    fn lower_bound(&self, _g: f64) -> f64 {
        // a†a ± ΔT̂ − g(a + a†) ≥ −g² − Δ
        -self.delta - 0.05
    }

    fn baselines(&self, _g: f64, lo: f64, hi: f64) -> Vec<Baseline> {
        rabi_baselines(lo, hi)
    }
}

/// Distance of each inter-parity degeneracy to the nearest integer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RabiDegeneracy {
    pub g: f64,
    pub x: f64,
    pub integer_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiSweep {
    pub sweep: SpectrumSweep,
    pub degeneracies: Vec<RabiDegeneracy>,
}

/// Parity-resolved Rabi spectra over `g_grid`.
pub fn rabi_sweep(delta: f64, g_grid: &[f64], opts: &SweepOptions) -> Result<RabiSweep> {
    let source = RabiLevels { delta, scan: ScanOptions::default(), opts: RabiOptions::default() };
    let sweep = spectrum::sweep(&source, delta, g_grid, opts)?;
    let degeneracies = sweep
        .crossings
        .iter()
        .map(|c| RabiDegeneracy { g: c.g, x: c.x, integer_distance: (c.x - c.x.round()).abs() })
        .collect();
    Ok(RabiSweep { sweep, degeneracies })
}
