//! Same-parity degeneracy search: joint zeros of `det M` and `c₁(M)` in `(x, g)`.
//!
//! A two-dimensional kernel needs every 5×5 minor to vanish, so `c₁`
//! vanishes with `det` under any fixed column scaling. Candidates are
//! confirmed only by the rank of the normalized matrix.

use nalgebra::{Matrix2, Matrix6, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::gfunction::{char_poly_of, connection_matrix, kernel_of};
use crate::model::{ModelParams, Parity};
use crate::series::SeriesOptions;
use crate::spectrum::KERNEL_TOL;

/// A two-parameter family of connection matrices.
pub trait MatrixFamily: Sync {
    /// Column-normalized entries and the positive column scales at `(x, g)`.
    fn eval(&self, x: f64, g: f64) -> Option<(Matrix6<f64>, [f64; 6])>;

    /// Whether a pole may lie in the cell `[x0, x1] × [g0, g1]`.
    fn obstructed(&self, _x: (f64, f64), _g: (f64, f64)) -> bool {
        false
    }
}

/// `M±(x, z₀; g, Δ)` at fixed Δ and parity.
pub struct DickeFamily {
    pub delta: f64,
    pub parity: Parity,
    /// Matching point as a multiple of `g` (2 puts it midway between the centers).
    pub z0_over_g: f64,
    pub series: SeriesOptions,
    pub guard: f64,
}

impl DickeFamily {
    pub fn new(delta: f64, parity: Parity) -> Self {
        Self { delta, parity, z0_over_g: 2.0, series: SeriesOptions::default(), guard: 1e-3 }
    }
}

impl MatrixFamily for DickeFamily {
    fn eval(&self, x: f64, g: f64) -> Option<(Matrix6<f64>, [f64; 6])> {
        let params = ModelParams::new(g, self.delta).ok()?;
        let m = connection_matrix(&params, self.parity, x, self.z0_over_g * g, &self.series).ok()?;
        Some((*m.entries(), *m.column_scales()))
    }

    fn obstructed(&self, (x0, x1): (f64, f64), (g0, g1): (f64, f64)) -> bool {
        let (lo, hi) = (x0 - self.guard, x1 + self.guard);
        let first = (lo.ceil().max(1.0) as i64) as f64 <= hi;
        // x = n − 8g² sweeps [n − 8g1², n − 8g0²] across the cell
        let shift_lo = 8.0 * g0.min(g1).powi(2);
        let shift_hi = 8.0 * g0.max(g1).powi(2);
        let n_min = (lo + shift_lo).ceil().max(0.0) as i64;
        let second = (n_min as f64) <= hi + shift_hi;
        first || second
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Grid points along x and g.
    pub grid: (usize, usize),
    pub max_iter: usize,
    /// Residual target on the frozen-scale `(det, c₁)`.
    pub f_tol: f64,
    /// Magnitude dip (relative to the grid median) that also seeds a cell.
    pub dip: f64,
    /// Relative singular-value threshold for the rank test.
    pub kernel_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { grid: (80, 50), max_iter: 200, f_tol: 1e-13, dip: 1e-3, kernel_tol: KERNEL_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegeneracyCandidate {
    pub x: f64,
    pub g: f64,
    pub delta: f64,
    pub parity: Parity,
    /// `det` and `c₁` of the column-normalized matrix at `(x, g)`.
    pub det_value: f64,
    pub c1_value: f64,
    pub kernel_dim: usize,
    pub newton_converged: bool,
    pub iterations: usize,
    pub smallest_singular_values: [f64; 2],
}

impl DegeneracyCandidate {
    pub fn confirmed(&self) -> bool {
        self.newton_converged && self.kernel_dim >= 2
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchReport {
    pub confirmed: Vec<DegeneracyCandidate>,
    pub near_misses: Vec<DegeneracyCandidate>,
    pub seeds: usize,
    pub skipped_cells: usize,
    pub failed_points: usize,
}

#[derive(Clone, Copy)]
struct GridValue {
    det: f64,
    c1: f64,
}

fn grid_value<F: MatrixFamily>(family: &F, x: f64, g: f64) -> Option<GridValue> {
    let (m, _) = family.eval(x, g)?;
    let cp = char_poly_of(&m);
    Some(GridValue { det: cp.det, c1: cp.c1 })
}

/// `(det, c₁)` with column scales frozen at `scales`.
fn frozen_matrix<F: MatrixFamily>(family: &F, scales: &[f64; 6], x: f64, g: f64) -> Option<Matrix6<f64>> {
    let (mut a, s) = family.eval(x, g)?;
    for j in 0..6 {
        let r = s[j] / scales[j];
        if !r.is_finite() {
            return None;
        }
        a.column_mut(j).scale_mut(r);
    }
    Some(a)
}

fn frozen<F: MatrixFamily>(family: &F, scales: &[f64; 6], x: f64, g: f64) -> Option<Vector2<f64>> {
    let cp = char_poly_of(&frozen_matrix(family, scales, x, g)?);
    Some(Vector2::new(cp.det, cp.c1))
}

/// Gauss–Newton on `U₂ᵀ M V₂ = 0`, the projection onto the two smallest
/// singular directions; it vanishes linearly at a rank-4 point where
/// `det` only vanishes quadratically.
fn polish<F: MatrixFamily>(family: &F, start: (f64, f64)) -> Option<(f64, f64)> {
    let (_, scales) = family.eval(start.0, start.1)?;
    let m = |x: f64, g: f64| frozen_matrix(family, &scales, x, g);
    let (mut x, mut g) = start;
    for _ in 0..30 {
        let a = m(x, g)?;
        let svd = a.svd(true, true);
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let u = svd.u?;
        let vt = svd.v_t?;
        let proj = |b: &Matrix6<f64>| {
            let mut r = nalgebra::Vector4::zeros();
            for (k, (i, j)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let ui = u.column(order[i]);
                let vj = vt.row(order[j]).transpose();
                r[k] = ui.dot(&(b * vj));
            }
            r
        };
        let r0 = proj(&a);
        let hx = 1e-7 * x.abs().max(1.0);
        let hg = 1e-7 * g.abs().max(1.0);
        let jx = (proj(&m(x + hx, g)?) - proj(&m(x - hx, g)?)) / (2.0 * hx);
        let jg = (proj(&m(x, g + hg)?) - proj(&m(x, g - hg)?)) / (2.0 * hg);
        let j = nalgebra::Matrix4x2::from_columns(&[jx, jg]);
        let step = (j.transpose() * j).try_inverse()? * (j.transpose() * r0);
        let (nx, ng) = (x - step[0], g - step[1]);
        if proj(&m(nx, ng)?).norm() > r0.norm() {
            break;
        }
        x = nx;
        g = ng;
        if step.amax() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Some((x, g))
}

struct Refined {
    x: f64,
    g: f64,
    converged: bool,
    iterations: usize,
}

/// Levenberg–Marquardt on `(det, c₁)` with a finite-difference Jacobian.
fn refine<F: MatrixFamily>(
    family: &F,
    start: (f64, f64),
    x_window: (f64, f64),
    g_window: (f64, f64),
    opts: &SearchOptions,
) -> Option<Refined> {
    let (_, scales) = family.eval(start.0, start.1)?;
    let f = |x: f64, g: f64| frozen(family, &scales, x, g);
    let (mut x, mut g) = start;
    let mut fx = f(x, g)?;
    let mut lambda = 1e-3;
    let inside = |x: f64, g: f64| {
        let (xs, gs) = (x_window.1 - x_window.0, g_window.1 - g_window.0);
        x >= x_window.0 - 0.05 * xs
            && x <= x_window.1 + 0.05 * xs
            && g >= g_window.0 - 0.05 * gs
            && g <= g_window.1 + 0.05 * gs
            && g > 0.0
    };
    // a double zero has a singular Jacobian, so iterate to stagnation
    for it in 0..opts.max_iter {
        if fx.amax() == 0.0 {
            return Some(Refined { x, g, converged: true, iterations: it });
        }
        let hx = 1e-7 * x.abs().max(1.0);
        let hg = 1e-7 * g.abs().max(1.0);
        let jx = (f(x + hx, g)? - f(x - hx, g)?) / (2.0 * hx);
        let jg = (f(x, g + hg)? - f(x, g - hg)?) / (2.0 * hg);
        let j = Matrix2::from_columns(&[jx, jg]);
        let jtj = j.transpose() * j;
        let jtf = j.transpose() * fx;
        let mut accepted = false;
        for _ in 0..30 {
            let damped = jtj + Matrix2::from_diagonal(&jtj.diagonal()) * lambda
                + Matrix2::identity() * (lambda * 1e-300);
            let Some(step) = damped.try_inverse().map(|inv| -(inv * jtf)) else {
                lambda *= 10.0;
                continue;
            };
            let (nx, ng) = (x + step[0], g + step[1]);
            if inside(nx, ng) {
                if let Some(fn_) = f(nx, ng) {
                    if fn_.norm() < fx.norm() {
                        let moved = step[0].abs().max(step[1].abs());
                        x = nx;
                        g = ng;
                        fx = fn_;
                        lambda = (lambda * 0.3).max(1e-12);
                        accepted = true;
                        if moved < 1e-15 * x.abs().max(1.0) {
                            return Some(Refined {
                                x,
                                g,
                                converged: fx.amax() < opts.f_tol,
                                iterations: it + 1,
                            });
                        }
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            return Some(Refined { x, g, converged: fx.amax() < opts.f_tol, iterations: it + 1 });
        }
    }
    Some(Refined { x, g, converged: fx.amax() < opts.f_tol, iterations: opts.max_iter })
}

fn median_abs(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.map(f64::abs).filter(|v| v.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Joint search over an arbitrary matrix family.
pub fn joint_search_family<F: MatrixFamily>(
    family: &F,
    delta: f64,
    parity: Parity,
    g_window: (f64, f64),
    x_window: (f64, f64),
    opts: &SearchOptions,
) -> SearchReport {
    let (nx, ng) = (opts.grid.0.max(2), opts.grid.1.max(2));
    let xs: Vec<f64> =
        (0..nx).map(|i| x_window.0 + (x_window.1 - x_window.0) * i as f64 / (nx - 1) as f64).collect();
    let gs: Vec<f64> =
        (0..ng).map(|j| g_window.0 + (g_window.1 - g_window.0) * j as f64 / (ng - 1) as f64).collect();
    let values: Vec<Option<GridValue>> = (0..nx * ng)
        .into_par_iter()
        .map(|k| grid_value(family, xs[k % nx], gs[k / nx]))
        .collect();
    let at = |i: usize, j: usize| values[j * nx + i];
    let mut report = SearchReport {
        failed_points: values.iter().filter(|v| v.is_none()).count(),
        ..Default::default()
    };
    let det_med = median_abs(values.iter().flatten().map(|v| v.det));
    let c1_med = median_abs(values.iter().flatten().map(|v| v.c1));

    let mut seeds = Vec::new();
    for j in 0..ng - 1 {
        for i in 0..nx - 1 {
            if family.obstructed((xs[i], xs[i + 1]), (gs[j], gs[j + 1])) {
                report.skipped_cells += 1;
                continue;
            }
            let corners = [at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)];
            if corners.iter().any(|c| c.is_none()) {
                report.skipped_cells += 1;
                continue;
            }
            let c: Vec<GridValue> = corners.into_iter().flatten().collect();
            let changes = |f: fn(&GridValue) -> f64| {
                let pos = c.iter().any(|v| f(v) > 0.0);
                let neg = c.iter().any(|v| f(v) < 0.0);
                let zero = c.iter().any(|v| f(v) == 0.0);
                (pos && neg) || zero
            };
            let dips = c.iter().any(|v| v.det.abs() < opts.dip * det_med)
                && c.iter().any(|v| v.c1.abs() < opts.dip * c1_med);
            if (changes(|v| v.det) && changes(|v| v.c1)) || dips {
                seeds.push((0.5 * (xs[i] + xs[i + 1]), 0.5 * (gs[j] + gs[j + 1])));
            }
        }
    }
    report.seeds = seeds.len();

    let refined: Vec<Option<DegeneracyCandidate>> = seeds
        .par_iter()
        .map(|&seed| {
            let r = refine(family, seed, x_window, g_window, opts)?;
            let make = |x: f64, g: f64| -> Option<DegeneracyCandidate> {
                let (m, _) = family.eval(x, g)?;
                let cp = char_poly_of(&m);
                let k = kernel_of(&m, opts.kernel_tol);
                Some(DegeneracyCandidate {
                    x,
                    g,
                    delta,
                    parity,
                    det_value: cp.det,
                    c1_value: cp.c1,
                    kernel_dim: k.kernel_dim,
                    newton_converged: r.converged,
                    iterations: r.iterations,
                    smallest_singular_values: k.smallest_singular_values,
                })
            };
            let plain = make(r.x, r.g)?;
            if !r.converged {
                return Some(plain);
            }
            // keep the polished point only if it shows the rank drop
            match polish(family, (r.x, r.g)).and_then(|(x, g)| make(x, g)) {
                Some(p) if p.kernel_dim >= 2 => Some(p),
                _ => Some(plain),
            }
        })
        .collect();

    for cand in refined.into_iter().flatten() {
        let bucket = if cand.confirmed() { &mut report.confirmed } else { &mut report.near_misses };
        let dup = bucket
            .iter()
            .any(|c| (c.x - cand.x).abs() < 1e-7 && (c.g - cand.g).abs() < 1e-7);
        if !dup {
            bucket.push(cand);
        }
    }
    report
}

/// Joint search for `M±` of the spin-3/2 model at fixed Δ.
pub fn joint_search(
    delta: f64,
    parity: Parity,
    g_window: (f64, f64),
    x_window: (f64, f64),
    opts: &SearchOptions,
) -> Result<SearchReport> {
    ModelParams::new(g_window.0, delta)?.require_analytic()?;
    ModelParams::new(g_window.1, delta)?;
    let family = DickeFamily::new(delta, parity);
    Ok(joint_search_family(&family, delta, parity, g_window, x_window, opts))
}
