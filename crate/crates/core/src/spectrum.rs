//! Regular and exceptional spectrum, eigenfunctions and coupling sweeps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gfunction::{connection_matrix, default_z0, kernel_vector, ConnectionMatrix, KernelVector};
use crate::model::{baselines, Baseline, BaselineKind, ModelParams, Parity};
use crate::roots::{self, RootKind, ScanOptions, SpectralFunction};
use crate::series::{
    ode_residual, ode_scale, phi_basis, psi_basis, SeriesBasis, SeriesOptions, PHI1, PHI1_BAR,
    PHI2, PHI2_BAR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EigenClass {
    Regular,
    ExceptionalFirstKind,
    ExceptionalSecondKind,
}

impl EigenClass {
    pub fn label(self) -> &'static str {
        match self {
            EigenClass::Regular => "regular",
            EigenClass::ExceptionalFirstKind => "exceptional-1",
            EigenClass::ExceptionalSecondKind => "exceptional-2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub x: f64,
    pub e: f64,
    pub parity: Parity,
    pub class: EigenClass,
    /// `|g_norm|` at `x` (regular) or half-width of the bracket around
    /// the baseline (exceptional).
    pub residual: f64,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    pub scan: ScanOptions,
    pub series: SeriesOptions,
    /// Matching point; `None` selects `2g`.
    pub z0: Option<f64>,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { scan: ScanOptions::default(), series: SeriesOptions::default(), z0: None }
    }
}

impl RootOptions {
    pub fn z0(&self, params: &ModelParams) -> f64 {
        self.z0.unwrap_or_else(|| default_z0(params))
    }
}

/// `G±(x, z₀)` as a [`SpectralFunction`] with poles on both baseline kinds.
pub struct DickeG {
    pub params: ModelParams,
    pub parity: Parity,
    pub z0: f64,
    pub series: SeriesOptions,
}

impl SpectralFunction for DickeG {
    fn eval_raw(&self, x: f64) -> Result<(f64, f64)> {
        let m = connection_matrix(&self.params, self.parity, x, self.z0, &self.series)?;
        let gv = m.g_value();
        Ok((gv.g_norm.signum() * (gv.g_norm != 0.0) as i32 as f64, gv.log_abs()))
    }

    fn poles(&self, lo: f64, hi: f64) -> Vec<f64> {
        baselines(&self.params, lo, hi).into_iter().map(|b| b.x).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RootScan {
    pub eigenvalues: Vec<Eigenvalue>,
    pub warnings: Vec<String>,
}

fn classify(params: &ModelParams, x: f64) -> EigenClass {
    match baselines(params, x - 1e-9, x + 1e-9).first().map(|b| b.kind) {
        Some(BaselineKind::First) => EigenClass::ExceptionalFirstKind,
        Some(BaselineKind::Second) => EigenClass::ExceptionalSecondKind,
        None => EigenClass::Regular,
    }
}

/// Converts raw scan roots into eigenvalues; `residual_of` gives `|g_norm|`.
pub(crate) fn to_eigenvalues(
    params: &ModelParams,
    parity: Parity,
    scan: roots::ScanReport,
    classify_pole: impl Fn(f64) -> EigenClass + Sync,
    residual_of: impl Fn(f64) -> f64 + Sync,
) -> RootScan {
    let eigenvalues = scan
        .roots
        .par_iter()
        .map(|r| {
            let (class, residual) = match r.kind {
                RootKind::Simple => (EigenClass::Regular, residual_of(r.x)),
                RootKind::AtPole(p) => {
                    (classify_pole(p), 0.5 * (r.bracket.1 - r.bracket.0).abs())
                }
            };
            Eigenvalue { x: r.x, e: params.to_energy(r.x), parity, class, residual, bracket: r.bracket }
        })
        .collect();
    RootScan { eigenvalues, warnings: scan.warnings }
}

/// Regular spectrum of `H±` in `[x_lo, x_hi]` as zeros of `G±`.
pub fn find_roots(
    params: &ModelParams,
    parity: Parity,
    x_lo: f64,
    x_hi: f64,
    opts: &RootOptions,
) -> Result<RootScan> {
    params.require_analytic()?;
    if !(x_lo < x_hi) {
        return Ok(RootScan::default());
    }
    let f = DickeG { params: *params, parity, z0: opts.z0(params), series: opts.series };
    let scan = roots::find_roots(&f, x_lo, x_hi, &opts.scan);
    Ok(to_eigenvalues(
        params,
        parity,
        scan,
        |p| classify(params, p),
        |x| {
            connection_matrix(params, parity, x, f.z0, &opts.series)
                .map(|m| m.g_value().g_norm.abs())
                .unwrap_or(f64::NAN)
        },
    ))
}

/// One-to-one matching of analytic roots against reference values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    /// `(root, reference)` pairs.
    pub pairs: Vec<(f64, f64)>,
    pub max_deviation: f64,
    pub unmatched_roots: Vec<f64>,
    pub unmatched_reference: Vec<f64>,
}

impl MatchReport {
    pub fn is_complete(&self, tol: f64) -> bool {
        self.unmatched_roots.is_empty()
            && self.unmatched_reference.is_empty()
            && self.max_deviation <= tol
    }
}

/// Greedy nearest matching within `tol`; both inputs need not be sorted.
pub fn match_values(roots: &[f64], reference: &[f64], tol: f64) -> MatchReport {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in roots.iter().enumerate() {
        for (j, o) in reference.iter().enumerate() {
            let d = (r - o).abs();
            if d <= tol {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_r = vec![false; roots.len()];
    let mut used_o = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let mut max_dev = 0.0f64;
    for (d, i, j) in candidates {
        if !used_r[i] && !used_o[j] {
            used_r[i] = true;
            used_o[j] = true;
            pairs.push((roots[i], reference[j]));
            max_dev = max_dev.max(d);
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    MatchReport {
        pairs,
        max_deviation: max_dev,
        unmatched_roots: roots.iter().zip(&used_r).filter(|(_, u)| !**u).map(|(r, _)| *r).collect(),
        unmatched_reference: reference
            .iter()
            .zip(&used_o)
            .filter(|(_, u)| !**u)
            .map(|(r, _)| *r)
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Exceptional spectrum

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub eps: f64,
    pub series: SeriesOptions,
    pub z0: Option<f64>,
    /// Lifted when `|c₋ₖ| / |c₀|` is below this for k = 1..3.
    pub lift_tol: f64,
    /// Fit declared unstable above this relative drift under ε halving.
    pub max_drift: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { eps: 1e-4, series: SeriesOptions::default(), z0: None, lift_tol: 1e-4, max_drift: 0.1 }
    }
}

/// Least-squares Laurent fit of `det M` around a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaurentDiagnostics {
    pub baseline: Baseline,
    pub parity: Parity,
    /// `[c₋₃, c₋₂, c₋₁, c₀]` of `det M · exp(−log_reference)` in powers of `x − b`.
    pub coefficients: [f64; 4],
    pub log_reference: f64,
    pub eps: [f64; 2],
    pub lifted: bool,
    /// Highest significant singular power (0 when lifted).
    pub pole_order: u32,
}

impl LaurentDiagnostics {
    pub fn residue(&self) -> f64 {
        self.coefficients[2]
    }
}

struct LaurentFit {
    /// Coefficients of `u⁻³, u⁻², u⁻¹, 1, u` with `u = (x − b)/ε`.
    d: [f64; 5],
}

fn fit_laurent(samples: &[(f64, f64)]) -> LaurentFit {
    let rows = samples.len();
    let a = DMatrix::from_fn(rows, 5, |i, j| samples[i].0.powi(j as i32 - 3));
    let y = DVector::from_iterator(rows, samples.iter().map(|s| s.1));
    let sol = a.svd(true, true).solve(&y, 1e-14).expect("svd solve");
    LaurentFit { d: [sol[0], sol[1], sol[2], sol[3], sol[4]] }
}

/// Samples `det M` at `b ± ε·{1,2,4,8}` and fits its Laurent expansion.
pub fn exceptional_probe(
    params: &ModelParams,
    parity: Parity,
    baseline: &Baseline,
    opts: &ProbeOptions,
) -> Result<LaurentDiagnostics> {
    params.require_analytic()?;
    if !baseline.is_consistent(params) {
        return Err(Error::NotABaseline { x: baseline.x });
    }
    let z0 = opts.z0.unwrap_or_else(|| default_z0(params));
    let b = baseline.x;
    let sample = |eps: f64| -> Result<Vec<(f64, f64, f64)>> {
        let mut out = Vec::with_capacity(8);
        for k in [1.0, 2.0, 4.0, 8.0] {
            for s in [-1.0, 1.0] {
                let u = s * k;
                let gv = connection_matrix(params, parity, b + u * eps, z0, &opts.series)?.g_value();
                out.push((u, gv.g_norm, gv.log_scale));
            }
        }
        Ok(out)
    };
    let coarse = sample(opts.eps)?;
    let fine = sample(0.5 * opts.eps)?;
    let reference = coarse.iter().chain(&fine).map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let fit = |raw: &[(f64, f64, f64)]| {
        let pts: Vec<(f64, f64)> =
            raw.iter().map(|(u, gn, ls)| (*u, gn * (ls - reference).exp())).collect();
        fit_laurent(&pts)
    };
    let to_x_units = |f: &LaurentFit, eps: f64| -> [f64; 4] {
        [f.d[0] * eps.powi(3), f.d[1] * eps.powi(2), f.d[2] * eps, f.d[3]]
    };
    let fc = fit(&coarse);
    let ff = fit(&fine);
    let cc = to_x_units(&fc, opts.eps);
    let cf = to_x_units(&ff, 0.5 * opts.eps);

    let lifted_in = |c: &[f64; 4]| (0..3).all(|k| c[k].abs() < opts.lift_tol * c[3].abs());
    let lifted = lifted_in(&cc) && lifted_in(&cf);

    // Singular contributions at distance ε, in units of the largest one.
    let order_of = |f: &LaurentFit| -> u32 {
        let sing = [f.d[2].abs(), f.d[1].abs(), f.d[0].abs()];
        let top = sing.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return 0;
        }
        (1..=3).rev().find(|&k| sing[k as usize - 1] > 1e-3 * top).unwrap_or(0)
    };
    let pole_order = if lifted { 0 } else { order_of(&fc).max(order_of(&ff)) };

    if !lifted {
        // stability of the significant coefficients
        let scale_c = fc.d.iter().take(4).fold(0.0f64, |m, v| m.max(v.abs()));
        let scale_f = ff.d.iter().take(4).fold(0.0f64, |m, v| m.max(v.abs()));
        let mut drift = 0.0f64;
        for k in 0..4 {
            if fc.d[k].abs() > 1e-3 * scale_c && ff.d[k].abs() > 1e-3 * scale_f {
                let rel = (cc[k] - cf[k]).abs() / cc[k].abs().max(cf[k].abs());
                drift = drift.max(rel);
            }
        }
        if drift > opts.max_drift {
            return Err(Error::FitUnstable { drift });
        }
    }

    Ok(LaurentDiagnostics {
        baseline: *baseline,
        parity,
        coefficients: cc,
        log_reference: reference,
        eps: [opts.eps, 0.5 * opts.eps],
        lifted,
        pole_order,
    })
}

/// Probe at `x`, which must coincide with a baseline.
pub fn exceptional_probe_at(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    opts: &ProbeOptions,
) -> Result<LaurentDiagnostics> {
    let b = baselines(params, x - 1e-12 * x.abs().max(1.0), x + 1e-12 * x.abs().max(1.0));
    let baseline = b.first().ok_or(Error::NotABaseline { x })?;
    exceptional_probe(params, parity, baseline, opts)
}

/// Residue and constant term `(c₋₁, c₀)` of `det M` at a simple-pole
/// baseline, relative to `exp(log_reference)` of the returned scale.
///
/// Richardson-combined antisymmetric samples at `b ± d` and `b ± 2d`.
pub fn baseline_residue(
    params: &ModelParams,
    parity: Parity,
    baseline: &Baseline,
    d: f64,
    opts: &ProbeOptions,
) -> Result<(f64, f64)> {
    params.require_analytic()?;
    let z0 = opts.z0.unwrap_or_else(|| default_z0(params));
    let mut gv = [(0.0, 0.0); 4];
    for (slot, u) in gv.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
        let v = connection_matrix(params, parity, baseline.x + u * d, z0, &opts.series)?.g_value();
        *slot = (v.g_norm, v.log_scale);
    }
    let reference = gv.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let v: Vec<f64> = gv.iter().map(|(gn, ls)| gn * (ls - reference).exp()).collect();
    let anti = |k: usize, dd: f64| 0.5 * dd * (v[3 - k] - v[k]);
    let sym = |k: usize| 0.5 * (v[3 - k] + v[k]);
    let residue = (4.0 * anti(1, d) - anti(0, 2.0 * d)) / 3.0;
    let constant = (4.0 * sym(1) - sym(0)) / 3.0;
    Ok((residue, constant))
}

/// A coupling at which the residue of a fixed baseline changes sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftingPoint {
    pub g: f64,
    pub baseline: Baseline,
    pub parity: Parity,
    /// `|c₋₁ / c₀|` at the refined coupling.
    pub residue_ratio: f64,
    /// Laurent probe at the refined coupling, if the fit succeeded.
    pub probe: Option<LaurentDiagnostics>,
}

impl LiftingPoint {
    pub fn lifted(&self) -> bool {
        self.probe.map_or(false, |p| p.lifted)
    }
}

/// Scans `g` for sign changes of the residue at baseline `(kind, n)` and
/// bisects each one. Sign changes that end within `10·d` of a baseline of the
/// other kind are collisions (the residue itself has a pole there) and are
/// dropped, as are brackets the bisection cannot evaluate.
pub fn lifting_scan(
    delta: f64,
    parity: Parity,
    kind: BaselineKind,
    n: u32,
    g_grid: &[f64],
    opts: &ProbeOptions,
) -> Result<Vec<LiftingPoint>> {
    let d = 1e-4;
    let residue_at = |g: f64| -> Option<(f64, f64, Baseline)> {
        let params = ModelParams::new(g, delta).ok()?;
        let b = crate::model::baseline(&params, kind, n);
        if b.collides {
            return None;
        }
        let (r, c) = baseline_residue(&params, parity, &b, d, opts).ok()?;
        Some((r, c, b))
    };
    let near_collision = |g: f64, x: f64| {
        let params = ModelParams::new(g, delta).expect("grid coupling");
        baselines(&params, x - 10.0 * d, x + 10.0 * d).iter().any(|o| o.kind != kind)
    };
    let samples: Vec<Option<f64>> = g_grid.par_iter().map(|&g| residue_at(g).map(|v| v.0)).collect();
    let mut out = Vec::new();
    for i in 1..g_grid.len() {
        let (Some(ra), Some(rb)) = (samples[i - 1], samples[i]) else { continue };
        if ra.signum() == rb.signum() {
            continue;
        }
        let (mut lo, mut hi, mut r_lo) = (g_grid[i - 1], g_grid[i], ra);
        let mut aborted = false;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let Some((r, ..)) = residue_at(mid) else {
                aborted = true;
                break;
            };
            if r.signum() == r_lo.signum() {
                lo = mid;
                r_lo = r;
            } else {
                hi = mid;
            }
        }
        if aborted {
            continue;
        }
        let (Some(a), Some(b)) = (residue_at(lo), residue_at(hi)) else { continue };
        let (g, (r, c, baseline)) = if (a.0 / a.1).abs() <= (b.0 / b.1).abs() { (lo, a) } else { (hi, b) };
        if near_collision(g, baseline.x) {
            continue;
        }
        let ratio = r / c;
        let params = ModelParams::new(g, delta)?;
        let probe = exceptional_probe(&params, parity, &baseline, opts).ok();
        out.push(LiftingPoint { g, baseline, parity, residue_ratio: ratio.abs(), probe });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Eigenfunctions

/// Tolerance on relative singular values for counting kernel dimensions.
pub const KERNEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Disk {
    /// Around `g`.
    D1,
    /// Around `3g`.
    D3,
    /// Around `−g`, via `φⱼ(z) = φ̄ⱼ(−z)`.
    DMinus1,
    /// Around `−3g`.
    DMinus3,
}

/// An eigenfunction `(φ₁, φ₂)` glued from the four local expansions.
#[derive(Debug, Clone)]
pub struct Eigenfunction {
    pub params: ModelParams,
    pub parity: Parity,
    pub x: f64,
    pub kernel: KernelVector,
    pub matrix: ConnectionMatrix,
    /// Raw weights of the φ basis (γ) and ψ basis (c).
    pub gamma: [f64; 3],
    pub c: [f64; 3],
    phi: SeriesBasis,
    psi: SeriesBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenfunctionReport {
    /// Max relative mismatch of φ vs ψ expansions on a grid in `D₁ ∩ D₃`.
    pub overlap_d2: f64,
    /// Max relative mismatch of `φⱼ(z)` vs `φ̄ⱼ(−z)` on a grid in `D₁ ∩ D₋₁`.
    pub overlap_d0: f64,
    /// `max_j |φⱼ(0) − φ̄ⱼ(0)|` relative to the function scale.
    pub parity_at_zero: f64,
    /// Max relative ODE residual over the sample points.
    pub ode_residual: f64,
}

impl Eigenfunction {
    fn disk_for(&self, z: f64) -> Result<Disk> {
        let g = self.params.g();
        let options =
            [(Disk::D1, g), (Disk::D3, 3.0 * g), (Disk::DMinus1, -g), (Disk::DMinus3, -3.0 * g)];
        let (disk, c) = options
            .into_iter()
            .min_by(|a, b| (z - a.1).abs().total_cmp(&(z - b.1).abs()))
            .unwrap();
        if (z - c).abs() > 0.9 * 2.0 * g {
            return Err(Error::OutsideDisk { z, center: c, radius: 1.8 * g });
        }
        Ok(disk)
    }

    /// `(φ₁, φ₂)` and their derivatives at `z` from the given disk.
    pub fn eval_in(&self, disk: Disk, z: f64) -> Result<([f64; 2], [f64; 2])> {
        let (basis, weights, reflect) = match disk {
            Disk::D1 => (&self.phi, &self.gamma, false),
            Disk::D3 => (&self.psi, &self.c, false),
            Disk::DMinus1 => (&self.phi, &self.gamma, true),
            Disk::DMinus3 => (&self.psi, &self.c, true),
        };
        if reflect {
            let (v, d) = basis.eval(-z)?.combine(weights);
            Ok(([v[PHI1_BAR], v[PHI2_BAR]], [-d[PHI1_BAR], -d[PHI2_BAR]]))
        } else {
            let (v, d) = basis.eval(z)?.combine(weights);
            Ok(([v[PHI1], v[PHI2]], [d[PHI1], d[PHI2]]))
        }
    }

    /// `(φ₁, φ₂)` at `z`, dispatched to the nearest expansion center.
    pub fn eval(&self, z: f64) -> Result<[f64; 2]> {
        Ok(self.eval_in(self.disk_for(z)?, z)?.0)
    }

    /// `(φ₁, φ₂, φ̄₁, φ̄₂)` and derivatives at `z`.
    pub fn eval_full(&self, z: f64) -> Result<([f64; 4], [f64; 4])> {
        let (v, d) = self.eval_in(self.disk_for(z)?, z)?;
        let (vb, db) = self.eval_in(self.disk_for(-z)?, -z)?;
        Ok(([v[0], v[1], vb[0], vb[1]], [d[0], d[1], -db[0], -db[1]]))
    }

    /// Relative ODE residual at `z`.
    pub fn residual_at(&self, z: f64) -> Result<f64> {
        let (v, d) = self.eval_full(z)?;
        let r = ode_residual(&self.params, self.parity, self.x, z, &v, &d)?;
        let s = ode_scale(&self.params, self.parity, self.x, z, &v, &d);
        Ok((0..4).map(|i| if s[i] > 0.0 { r[i].abs() / s[i] } else { 0.0 }).fold(0.0, f64::max))
    }

    /// Overlap and residual diagnostics on fixed grids plus `points`.
    pub fn report(&self, points: &[f64]) -> Result<EigenfunctionReport> {
        let g = self.params.g();
        let mut scale = 0.0f64;
        let mut d2 = 0.0f64;
        for i in 0..10 {
            let z = g * (1.3 + 1.4 * i as f64 / 9.0);
            let (a, _) = self.eval_in(Disk::D1, z)?;
            let (b, _) = self.eval_in(Disk::D3, z)?;
            scale = scale.max(a[0].abs()).max(a[1].abs());
            d2 = d2.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
        let mut d0 = 0.0f64;
        for i in 0..10 {
            let z = g * (-0.7 + 1.4 * i as f64 / 9.0);
            let (a, _) = self.eval_in(Disk::D1, z)?;
            let (b, _) = self.eval_in(Disk::DMinus1, z)?;
            scale = scale.max(a[0].abs()).max(a[1].abs());
            d0 = d0.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
        let v0 = self.phi.eval(0.0)?.combine(&self.gamma).0;
        let at_zero = (v0[PHI1] - v0[PHI1_BAR]).abs().max((v0[PHI2] - v0[PHI2_BAR]).abs());
        let mut ode = 0.0f64;
        for &z in points {
            ode = ode.max(self.residual_at(z)?);
        }
        let scale = scale.max(f64::MIN_POSITIVE);
        Ok(EigenfunctionReport {
            overlap_d2: d2 / scale,
            overlap_d0: d0 / scale,
            parity_at_zero: at_zero / scale,
            ode_residual: ode,
        })
    }
}

/// Builds the eigenfunction at a regular root from the kernel of `M±`.
pub fn assemble_eigenfunction(
    params: &ModelParams,
    parity: Parity,
    root: &Eigenvalue,
    opts: &RootOptions,
) -> Result<Eigenfunction> {
    let z0 = opts.z0(params);
    let matrix = connection_matrix(params, parity, root.x, z0, &opts.series)?;
    let kernel = kernel_vector(&matrix, KERNEL_TOL);
    if kernel.kernel_dim != 1 {
        return Err(Error::DegenerateKernel { dim: kernel.kernel_dim });
    }
    let (c, gamma) = matrix.raw_coefficients(&kernel);
    let wide = SeriesOptions { reach: None, ..opts.series };
    let phi = phi_basis(params, parity, root.x, &wide)?;
    let psi = psi_basis(params, parity, root.x, &wide)?;
    Ok(Eigenfunction { params: *params, parity, x: root.x, kernel, matrix, gamma, c, phi, psi })
}

// ---------------------------------------------------------------------------
// Coupling sweeps

/// Provider of parity-resolved levels at a given coupling.
pub trait LevelSource: Sync {
    fn roots(&self, g: f64, parity: Parity, lo: f64, hi: f64, x_tol: f64) -> Result<RootScan>;
    /// A value of `x` below the whole spectrum at coupling `g`.
    fn lower_bound(&self, g: f64) -> f64;
    fn baselines(&self, g: f64, lo: f64, hi: f64) -> Vec<Baseline>;
}

/// Levels of the spin-3/2 model at fixed Δ.
pub struct DickeLevels {
    pub delta: f64,
    pub opts: RootOptions,
}

impl LevelSource for DickeLevels {
    fn roots(&self, g: f64, parity: Parity, lo: f64, hi: f64, x_tol: f64) -> Result<RootScan> {
        let params = ModelParams::new(g, self.delta)?;
        let mut opts = self.opts;
        opts.scan.x_tol = x_tol;
        find_roots(&params, parity, lo, hi, &opts)
    }

    fn lower_bound(&self, g: f64) -> f64 {
        // H± ≥ −9g² − 3Δ
        -8.0 * g * g - 3.0 * self.delta - 0.05
    }

    fn baselines(&self, g: f64, lo: f64, hi: f64) -> Vec<Baseline> {
        ModelParams::new(g, self.delta).map(|p| baselines(&p, lo, hi)).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XWindow {
    Fixed { lo: f64, hi: f64 },
    /// The lowest `levels` roots per parity, scanning upward from the lower bound.
    Lowest { levels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub window: XWindow,
    /// Refine inter-parity crossings by bisection in `g`.
    pub refine_crossings: bool,
    /// Relative bisection tolerance for roots.
    pub x_rel_tol: f64,
    /// Half-width around baselines within which a crossing is not "between" them.
    pub baseline_guard: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            window: XWindow::Lowest { levels: 10 },
            refine_crossings: true,
            x_rel_tol: 1e-14,
            baseline_guard: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub g: f64,
    pub x: f64,
    pub parities: (Parity, Parity),
    pub levels: (usize, usize),
    /// Distance from `x` to the nearest baseline at coupling `g`.
    pub baseline_distance: f64,
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSweep {
    pub delta: f64,
    pub g_grid: Vec<f64>,
    /// `levels[i][p]`: sorted levels at `g_grid[i]` for parity index `p` (0 = +, 1 = −).
    pub levels: Vec<[Vec<Eigenvalue>; 2]>,
    pub crossings: Vec<Crossing>,
    /// Steps where nearest-neighbour matching disagreed with the level order.
    pub ambiguous_steps: usize,
    pub min_same_parity_gap: f64,
    /// Second-kind baselines `x = n − 8g²` inside the level range, per `g`.
    pub overlay: Vec<Vec<Baseline>>,
    pub flags: Vec<String>,
}

fn parity_index(p: Parity) -> usize {
    match p {
        Parity::Plus => 0,
        Parity::Minus => 1,
    }
}

fn dedup_sorted(mut v: Vec<Eigenvalue>) -> Vec<Eigenvalue> {
    v.sort_by(|a, b| a.x.total_cmp(&b.x));
    v.dedup_by(|b, a| (a.x - b.x).abs() <= 1e-9 * a.x.abs().max(1.0));
    v
}

fn levels_at<S: LevelSource>(
    source: &S,
    g: f64,
    parity: Parity,
    opts: &SweepOptions,
    flags: &mut Vec<String>,
) -> Result<Vec<Eigenvalue>> {
    let tol_for = |lo: f64, hi: f64| opts.x_rel_tol * lo.abs().max(hi.abs()).max(1.0);
    match opts.window {
        XWindow::Fixed { lo, hi } => {
            let scan = source.roots(g, parity, lo, hi, tol_for(lo, hi))?;
            flags.extend(scan.warnings.into_iter().map(|w| format!("g = {g}: {w}")));
            Ok(dedup_sorted(scan.eigenvalues))
        }
        XWindow::Lowest { levels } => {
            let mut lo = source.lower_bound(g);
            let mut found = Vec::new();
            let mut chunks = 0;
            while found.len() < levels {
                let hi = lo + 2.0;
                let scan = source.roots(g, parity, lo, hi, tol_for(lo, hi))?;
                flags.extend(scan.warnings.into_iter().map(|w| format!("g = {g}: {w}")));
                found.extend(scan.eigenvalues);
                found = dedup_sorted(found);
                lo = hi;
                chunks += 1;
                if chunks > 200 {
                    flags.push(format!("g = {g}: fewer than {levels} levels found"));
                    break;
                }
            }
            found.truncate(levels);
            Ok(found)
        }
    }
}

/// Nearest-neighbour assignment of predicted positions to `next` levels.
fn continuation(predicted: &[f64], next: &[Eigenvalue]) -> Vec<Option<usize>> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in predicted.iter().enumerate() {
        for (j, b) in next.iter().enumerate() {
            cand.push(((a - b.x).abs(), i, j));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; predicted.len()];
    let mut used = vec![false; next.len()];
    for (_, i, j) in cand {
        if out[i].is_none() && !used[j] {
            out[i] = Some(j);
            used[j] = true;
        }
    }
    out
}

fn nearest_root<S: LevelSource>(
    source: &S,
    g: f64,
    parity: Parity,
    guess: f64,
    half_width: f64,
    x_tol: f64,
) -> Option<f64> {
    let scan = source.roots(g, parity, guess - half_width, guess + half_width, x_tol).ok()?;
    scan.eigenvalues
        .iter()
        .map(|e| e.x)
        .min_by(|a, b| (a - guess).abs().total_cmp(&(b - guess).abs()))
}

/// Bisection in `g` on the difference of two continued levels.
#[allow(clippy::too_many_arguments)]
fn refine_crossing<S: LevelSource>(
    source: &S,
    (g0, g1): (f64, f64),
    (a0, a1): (f64, f64),
    (b0, b1): (f64, f64),
    pa: Parity,
    pb: Parity,
    x_rel_tol: f64,
) -> Option<(f64, f64)> {
    let width = ((a1 - a0).abs().max((b1 - b0).abs()) * 2.0).max(0.02);
    let x_tol = x_rel_tol * a0.abs().max(1.0);
    let (mut glo, mut ghi) = (g0, g1);
    let (mut alo, mut blo) = (a0, b0);
    let (mut ahi, mut bhi) = (a1, b1);
    let d_lo = (a0 - b0).signum();
    let mut last = (0.5 * (g0 + g1), 0.5 * (a0 + a1));
    for _ in 0..60 {
        let gm = 0.5 * (glo + ghi);
        let t = 0.5;
        let ga = alo + t * (ahi - alo);
        let gb = blo + t * (bhi - blo);
        let xa = nearest_root(source, gm, pa, ga, width, x_tol)?;
        let xb = nearest_root(source, gm, pb, gb, width, x_tol)?;
        last = (gm, 0.5 * (xa + xb));
        let d = xa - xb;
        if d == 0.0 || ghi - glo < 1e-12 {
            break;
        }
        if d.signum() == d_lo {
            glo = gm;
            alo = xa;
            blo = xb;
        } else {
            ghi = gm;
            ahi = xa;
            bhi = xb;
        }
    }
    Some(last)
}

/// Sweeps the coupling at fixed Δ and tracks levels of both parities.
pub fn sweep<S: LevelSource>(
    source: &S,
    delta: f64,
    g_grid: &[f64],
    opts: &SweepOptions,
) -> Result<SpectrumSweep> {
    let per_g: Vec<Result<([Vec<Eigenvalue>; 2], Vec<String>)>> = g_grid
        .par_iter()
        .map(|&g| {
            let mut flags = Vec::new();
            let plus = levels_at(source, g, Parity::Plus, opts, &mut flags)?;
            let minus = levels_at(source, g, Parity::Minus, opts, &mut flags)?;
            Ok(([plus, minus], flags))
        })
        .collect();
    let mut levels = Vec::with_capacity(g_grid.len());
    let mut flags = Vec::new();
    for r in per_g {
        let (lv, f) = r?;
        levels.push(lv);
        flags.extend(f);
    }

    // Continuation: tracks[p][t] = level index at each g (None when lost).
    // Nearest-neighbour matching against a linear predictor; same-parity
    // levels may not cross, so disagreement with the energy order is
    // flagged and the order kept.
    let mut tracks: [Vec<Vec<Option<usize>>>; 2] = [Vec::new(), Vec::new()];
    let mut ambiguous_steps = 0;
    let mut min_gap = f64::INFINITY;
    for p in 0..2 {
        let parity = if p == 0 { Parity::Plus } else { Parity::Minus };
        if let Some(first) = levels.first() {
            tracks[p] = (0..first[p].len()).map(|i| vec![Some(i)]).collect();
        }
        for (gi, lv) in levels.iter().enumerate() {
            for w in lv[p].windows(2) {
                min_gap = min_gap.min(w[1].x - w[0].x);
            }
            if gi == 0 {
                continue;
            }
            let prev = &levels[gi - 1][p];
            let predicted: Vec<f64> =
                (0..prev.len()).map(|i| extrapolate(&levels, g_grid, p, gi, i)).collect();
            let map = continuation(&predicted, &lv[p]);
            if map.iter().enumerate().any(|(i, m)| *m != Some(i) && i < lv[p].len()) {
                ambiguous_steps += 1;
                flags.push(format!(
                    "parity {parity}: nearest-neighbour continuation disagrees with level order between g = {} and g = {} (narrow avoided crossing or under-resolved step); order kept",
                    g_grid[gi - 1], g_grid[gi]
                ));
            }
            for track in tracks[p].iter_mut() {
                let next = track[gi - 1].filter(|i| *i < lv[p].len());
                if let Some(i) = next {
                    let jump = (lv[p][i].x - predicted[i]).abs();
                    let spacing = neighbor_spacing(prev, i);
                    if jump > spacing {
                        flags.push(format!(
                            "parity {parity}: level {i} departs from its predicted position by {jump:.3e} between g = {} and g = {} (spacing {spacing:.3e})",
                            g_grid[gi - 1], g_grid[gi]
                        ));
                    }
                } else if track[gi - 1].is_some() {
                    flags.push(format!("parity {parity}: continuation gap at g = {}", g_grid[gi]));
                }
                track.push(next);
            }
        }
    }

    // Inter-parity crossings along continued tracks.
    let mut raw_crossings = Vec::new();
    for (ia, ta) in tracks[0].iter().enumerate() {
        for (ib, tb) in tracks[1].iter().enumerate() {
            for gi in 1..g_grid.len() {
                let (Some(a0), Some(a1), Some(b0), Some(b1)) =
                    (ta[gi - 1], ta[gi], tb[gi - 1], tb[gi])
                else {
                    continue;
                };
                let xa0 = levels[gi - 1][0][a0].x;
                let xa1 = levels[gi][0][a1].x;
                let xb0 = levels[gi - 1][1][b0].x;
                let xb1 = levels[gi][1][b1].x;
                let d0 = xa0 - xb0;
                let d1 = xa1 - xb1;
                if d0 == 0.0 || d0.signum() != d1.signum() && d1 != 0.0 {
                    raw_crossings.push((gi, ia, ib, (xa0, xa1), (xb0, xb1)));
                }
            }
        }
    }
    let crossings: Vec<Crossing> = raw_crossings
        .par_iter()
        .map(|&(gi, ia, ib, (xa0, xa1), (xb0, xb1))| {
            let (g0, g1) = (g_grid[gi - 1], g_grid[gi]);
            let d0 = xa0 - xb0;
            let d1 = xa1 - xb1;
            let t = if d0 == d1 { 0.5 } else { d0 / (d0 - d1) };
            let mut g = g0 + t * (g1 - g0);
            let mut x = xa0 + t * (xa1 - xa0);
            let mut refined = false;
            if opts.refine_crossings {
                if let Some((gr, xr)) = refine_crossing(
                    source,
                    (g0, g1),
                    (xa0, xa1),
                    (xb0, xb1),
                    Parity::Plus,
                    Parity::Minus,
                    opts.x_rel_tol,
                ) {
                    g = gr;
                    x = xr;
                    refined = true;
                }
            }
            Crossing {
                g,
                x,
                parities: (Parity::Plus, Parity::Minus),
                levels: (ia, ib),
                baseline_distance: baseline_distance(source, g, x),
                refined,
            }
        })
        .collect();

    let overlay = levels
        .iter()
        .zip(g_grid)
        .map(|(lv, &g)| {
            let all = lv[0].iter().chain(&lv[1]);
            let lo = all.clone().map(|e| e.x).fold(f64::INFINITY, f64::min);
            let hi = all.map(|e| e.x).fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                source
                    .baselines(g, lo, hi)
                    .into_iter()
                    .filter(|b| b.kind == BaselineKind::Second)
                    .collect()
            } else {
                Vec::new()
            }
        })
        .collect();

    Ok(SpectrumSweep {
        delta,
        g_grid: g_grid.to_vec(),
        levels,
        crossings,
        ambiguous_steps,
        min_same_parity_gap: min_gap,
        overlay,
        flags,
    })
}

/// Polynomial extrapolation of level `i` to `g_grid[gi]` from up to three earlier points.
fn extrapolate(levels: &[[Vec<Eigenvalue>; 2]], g_grid: &[f64], p: usize, gi: usize, i: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (gi.saturating_sub(3)..gi)
        .filter_map(|k| levels[k][p].get(i).map(|e| (g_grid[k], e.x)))
        .collect();
    let g = g_grid[gi];
    // Lagrange form
    pts.iter()
        .enumerate()
        .map(|(a, &(ga, xa))| {
            let w: f64 = pts
                .iter()
                .enumerate()
                .filter(|(b, _)| *b != a)
                .map(|(_, &(gb, _))| (g - gb) / (ga - gb))
                .product();
            xa * w
        })
        .sum()
}

fn neighbor_spacing(levels: &[Eigenvalue], i: usize) -> f64 {
    let mut s = f64::INFINITY;
    if i > 0 {
        s = s.min(levels[i].x - levels[i - 1].x);
    }
    if i + 1 < levels.len() {
        s = s.min(levels[i + 1].x - levels[i].x);
    }
    if s.is_finite() {
        s
    } else {
        1.0
    }
}

fn baseline_distance<S: LevelSource>(source: &S, g: f64, x: f64) -> f64 {
    source
        .baselines(g, x - 2.0, x + 2.0)
        .iter()
        .map(|b| (b.x - x).abs())
        .fold(f64::INFINITY, f64::min)
}

/// `steps` evenly spaced couplings in `[g_lo, g_hi]`.
pub fn g_grid(g_lo: f64, g_hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(g_lo > 0.0) || !(g_hi >= g_lo) || steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 < g_lo <= g_hi and steps >= 1 (got {g_lo}, {g_hi}, {steps})"
        )));
    }
    if steps == 1 {
        return Ok(vec![g_lo]);
    }
    Ok((0..steps).map(|i| g_lo + (g_hi - g_lo) * i as f64 / (steps - 1) as f64).collect())
}

/// Coupling sweep of the spin-3/2 model.
pub fn sweep_g(
    delta: f64,
    g_lo: f64,
    g_hi: f64,
    steps: usize,
    root_opts: &RootOptions,
    opts: &SweepOptions,
) -> Result<SpectrumSweep> {
    let grid = g_grid(g_lo, g_hi, steps)?;
    let source = DickeLevels { delta, opts: *root_opts };
    sweep(&source, delta, &grid, opts)
}

impl SpectrumSweep {
    /// Lowest level of each parity at every coupling.
    pub fn ground_parities(&self) -> Vec<Option<Parity>> {
        self.levels
            .iter()
            .map(|lv| match (lv[0].first(), lv[1].first()) {
                (Some(p), Some(m)) => Some(if m.x < p.x { Parity::Minus } else { Parity::Plus }),
                (Some(_), None) => Some(Parity::Plus),
                (None, Some(_)) => Some(Parity::Minus),
                (None, None) => None,
            })
            .collect()
    }

    pub fn levels_for(&self, gi: usize, parity: Parity) -> &[Eigenvalue] {
        &self.levels[gi][parity_index(parity)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_range_yields_no_roots() {
        let p = ModelParams::new(0.25, 0.7).unwrap();
        let r = find_roots(&p, Parity::Minus, 1.0, 1.0, &RootOptions::default()).unwrap();
        assert!(r.eigenvalues.is_empty());
    }

    #[test]
    fn matching_is_one_to_one() {
        let m = match_values(&[1.0, 2.0, 2.0000001], &[2.0, 1.00000001, 5.0], 1e-6);
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.unmatched_roots, vec![2.0000001]);
        assert_eq!(m.unmatched_reference, vec![5.0]);
        assert!((m.max_deviation - 1e-8).abs() < 1e-12);
    }

    #[test]
    fn probe_rejects_non_baseline() {
        let p = ModelParams::new(0.25, 0.7).unwrap();
        let fake = Baseline { kind: BaselineKind::First, n: 1, x: 1.2, collides: false };
        assert!(matches!(
            exceptional_probe(&p, Parity::Plus, &fake, &ProbeOptions::default()),
            Err(Error::NotABaseline { .. })
        ));
        assert!(matches!(
            exceptional_probe_at(&p, Parity::Plus, 1.2, &ProbeOptions::default()),
            Err(Error::NotABaseline { .. })
        ));
    }

    #[test]
    fn grid_endpoints() {
        let g = g_grid(0.05, 1.2, 100).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.05);
        assert!((g[99] - 1.2).abs() < 1e-15);
        assert!(g_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn laurent_fit_recovers_synthetic_coefficients() {
        let f = |u: f64| 0.5 / u.powi(3) - 2.0 / u + 3.0 + 0.1 * u;
        let pts: Vec<(f64, f64)> =
            [1.0, 2.0, 4.0, 8.0].iter().flat_map(|&k| [(k, f(k)), (-k, f(-k))]).collect();
        let fit = fit_laurent(&pts);
        let expected = [0.5, 0.0, -2.0, 3.0, 0.1];
        for (a, b) in fit.d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
