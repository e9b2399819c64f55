//! Local Frobenius solutions of the first-order Bargmann system.
//!
//! The four unknowns `(φ₁, φ₂, φ̄₁, φ̄₂)` with `φ̄ⱼ(z) = φⱼ(−z)` obey a linear
//! first-order system with regular singular points at `±g` and `±3g`. The
//! solutions analytic at `z = g` (family [`Family::Phi`]) and at `z = 3g`
//! (family [`Family::Psi`]) each form a three-dimensional space. A basis is
//! obtained by running the coupled recurrences for the `φ₂`/`φ̄₂`
//! coefficients from the initial data `(c₂,₀, c̄₂,₀, c̄₂,₁)` set to the unit
//! vectors; the `φ₁`/`φ̄₁` coefficients follow algebraically.
//!
//! Both expansions converge in a disk of radius `2g` around their center.
//! The negative-parity chain uses the same recurrences with every term
//! coupling a barred to an unbarred sequence sign-reversed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BaselineKind, ModelParams, Parity};

/// Index of each component in coefficient and value tables.
pub const PHI1: usize = 0;
pub const PHI2: usize = 1;
pub const PHI1_BAR: usize = 2;
pub const PHI2_BAR: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    /// Expansion around `z = g`.
    Phi,
    /// Expansion around `z = 3g`.
    Psi,
}

impl Family {
    pub fn center(self, params: &ModelParams) -> f64 {
        match self {
            Family::Phi => params.g(),
            Family::Psi => 3.0 * params.g(),
        }
    }

    /// Baseline kind on which this family's recurrence divides by zero.
    pub fn baseline_kind(self) -> BaselineKind {
        match self {
            Family::Phi => BaselineKind::First,
            Family::Psi => BaselineKind::Second,
        }
    }
}

/// Free data `(c₂,₀, c̄₂,₀, c̄₂,₁)` of the recurrences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialData(pub [f64; 3]);

impl InitialData {
    pub fn unit(k: usize) -> Self {
        let mut v = [0.0; 3];
        v[k] = 1.0;
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderPolicy {
    Fixed(usize),
    /// Stop once the terms `|cₙ|·reachⁿ` of every sequence fall below
    /// `tol` times their running maximum for four consecutive orders.
    Adaptive { tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    pub policy: OrderPolicy,
    /// Minimum distance in `x` from a baseline of the family's kind.
    pub pole_guard: f64,
    /// Hard cap on the series order.
    pub max_order: usize,
    /// Evaluations are allowed up to `margin · 2g` from the center.
    pub margin: f64,
    /// Distance used by the adaptive policy; defaults to `margin · 2g`.
    pub reach: Option<f64>,
    /// Neumaier summation of the recurrence right-hand sides.
    pub compensated: bool,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self {
            policy: OrderPolicy::Adaptive { tol: 1e-17 },
            pole_guard: 1e-6,
            max_order: 2000,
            margin: 0.9,
            reach: None,
            compensated: false,
        }
    }
}

impl SeriesOptions {
    pub fn with_reach(mut self, reach: f64) -> Self {
        self.reach = Some(reach);
        self
    }

    pub fn with_policy(mut self, policy: OrderPolicy) -> Self {
        self.policy = policy;
        self
    }
}

/// Coefficients of the four component sequences of one solution.
pub type Coefficients = [Vec<f64>; 4];

/// Three linearly independent local solutions at a given center.
#[derive(Debug, Clone)]
pub struct SeriesBasis {
    params: ModelParams,
    family: Family,
    parity: Parity,
    x: f64,
    center: f64,
    order: usize,
    margin: f64,
    coeffs: [Coefficients; 3],
    tail_ratio: f64,
}

/// Values (and first derivatives) of the three basis solutions at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisValues {
    /// `values[k][c]`: component `c` of basis solution `k`.
    pub values: [[f64; 4]; 3],
    pub derivatives: [[f64; 4]; 3],
    /// Bound on truncation plus evaluation rounding, over all entries.
    pub tail_bound: f64,
}

impl BasisValues {
    pub fn zero() -> Self {
        Self { values: [[0.0; 4]; 3], derivatives: [[0.0; 4]; 3], tail_bound: 0.0 }
    }

    /// Linear combination `Σₖ weights[k] · values[k]`.
    pub fn combine(&self, weights: &[f64; 3]) -> ([f64; 4], [f64; 4]) {
        let mut v = [0.0; 4];
        let mut d = [0.0; 4];
        for k in 0..3 {
            for c in 0..4 {
                v[c] += weights[k] * self.values[k][c];
                d[c] += weights[k] * self.derivatives[k][c];
            }
        }
        (v, d)
    }
}

impl SeriesBasis {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }
    pub fn family(&self) -> Family {
        self.family
    }
    pub fn parity(&self) -> Parity {
        self.parity
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn center(&self) -> f64 {
        self.center
    }
    /// Highest power kept in every sequence.
    pub fn order(&self) -> usize {
        self.order
    }
    /// Estimated asymptotic ratio `|cₙ₊₁ / cₙ|`.
    pub fn tail_ratio(&self) -> f64 {
        self.tail_ratio
    }
    pub fn radius(&self) -> f64 {
        2.0 * self.params.g()
    }
    pub fn coefficients(&self, k: usize, component: usize) -> &[f64] {
        &self.coeffs[k][component]
    }
    pub fn solution(&self, k: usize) -> &Coefficients {
        &self.coeffs[k]
    }

    pub fn eval(&self, z: f64) -> Result<BasisValues> {
        eval_basis(self, z)
    }
}

/// Sums the right-hand side of one recurrence step.
#[inline]
fn total<const K: usize>(terms: [f64; K], compensated: bool) -> f64 {
    if !compensated {
        return terms.iter().sum();
    }
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            carry += (sum - s) + t;
        } else {
            carry += (t - s) + sum;
        }
        sum = s;
    }
    sum + carry
}

#[inline]
fn at(seq: &[f64], i: isize) -> f64 {
    if i < 0 {
        0.0
    } else {
        seq[i as usize]
    }
}

/// Checks the pole precondition of `family` at `x`.
pub fn check_pole_distance(
    params: &ModelParams,
    family: Family,
    x: f64,
    guard: f64,
) -> Result<()> {
    let (shifted, offset, min_n) = match family {
        Family::Phi => (x, 0.0, 1.0),
        Family::Psi => (x + 8.0 * params.g() * params.g(), 8.0 * params.g() * params.g(), 0.0),
    };
    let n = shifted.round().max(min_n);
    if (shifted - n).abs() < guard {
        return Err(Error::PoleProximity {
            x,
            baseline: n - offset,
            kind: family.baseline_kind(),
            guard,
        });
    }
    Ok(())
}

/// Coefficients `0..=order` of the solution with the given initial data.
pub fn particular_solution(
    params: &ModelParams,
    family: Family,
    parity: Parity,
    x: f64,
    init: InitialData,
    order: usize,
    compensated: bool,
) -> Result<Coefficients> {
    params.require_analytic()?;
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("x must be finite (got {x})")));
    }
    Ok(match family {
        Family::Phi => phi_recurrence(params, parity, x, init, order, compensated),
        Family::Psi => psi_recurrence(params, parity, x, init, order, compensated),
    })
}

fn phi_recurrence(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    init: InitialData,
    order: usize,
    comp: bool,
) -> Coefficients {
    let g = params.g();
    let d = params.delta();
    let s = parity.sign();
    let g2 = g * g;
    let d2 = d * d;
    let len = order + 2;
    let mut a = vec![0.0; len + 1];
    let mut b = vec![0.0; len + 1];
    a[0] = init.0[0];
    b[0] = init.0[1];
    b[1] = init.0[2];

    for n in 0..len - 1 {
        let nf = n as f64;
        let ni = n as isize;
        // α₂,ₙ₊₁ from the φ₁ equation; ᾱ₂,ₙ₊₁ is already known.
        let rhs = total(
            [
                (3.0 * d2 - nf * nf + 2.0 * x * nf - 2.0 * g2 - x * x - 2.0 * x * g2) * a[n],
                g * (1.0 - 4.0 * x - 2.0 * g2 + 4.0 * nf - 4.0) * at(&a, ni - 1),
                -3.0 * g2 * at(&a, ni - 2),
                s * 4.0 * d * g * (nf + 1.0) * b[n + 1],
                s * 2.0 * d * (x + 2.0 * g2 - nf) * b[n],
                s * 6.0 * d * g * at(&b, ni - 1),
            ],
            comp,
        );
        a[n + 1] = rhs / (2.0 * g * (nf + 1.0) * (x - (nf + 1.0)));

        // ᾱ₂,ₙ₊₂ from the φ̄₁ equation, consuming α₂,ₙ₊₁.
        {
            let rhs = total(
                [
                    -2.0 * g * (nf + 1.0) * (3.0 * nf + 2.0 - 3.0 * x + 8.0 * g2) * b[n + 1],
                    (3.0 * d2 - nf * nf + nf * (2.0 * x - 16.0 * g2)
                        - 4.0 * g2
                        - (x - 2.0 * g2) * (x - 4.0 * g2))
                        * b[n],
                    g * (4.0 * x - 10.0 * g2 + 3.0 - 4.0 * nf) * at(&b, ni - 1),
                    -3.0 * g2 * at(&b, ni - 2),
                    -s * 8.0 * d * g * (nf + 1.0) * a[n + 1],
                    s * 2.0 * d * (x - 4.0 * g2 - nf) * a[n],
                    -s * 6.0 * d * g * at(&a, ni - 1),
                ],
                comp,
            );
            b[n + 2] = rhs / (8.0 * g2 * (nf + 2.0) * (nf + 1.0));
        }
    }

    let norm = -1.0 / (3f64.sqrt() * d);
    let mut c1 = Vec::with_capacity(order + 1);
    let mut c1b = Vec::with_capacity(order + 1);
    for n in 0..=order {
        let nf = n as f64;
        let ni = n as isize;
        c1.push(norm * total([(nf - x) * a[n], -g * at(&a, ni - 1), s * 2.0 * d * b[n]], comp));
        c1b.push(
            norm * total(
                [
                    (nf - x + 2.0 * g2) * b[n],
                    g * at(&b, ni - 1),
                    2.0 * g * (nf + 1.0) * b[n + 1],
                    s * 2.0 * d * a[n],
                ],
                comp,
            ),
        );
    }
    a.truncate(order + 1);
    b.truncate(order + 1);
    [c1, a, c1b, b]
}

fn psi_recurrence(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    init: InitialData,
    order: usize,
    comp: bool,
) -> Coefficients {
    let g = params.g();
    let d = params.delta();
    let s = parity.sign();
    let g2 = g * g;
    let d2 = d * d;
    let len = order + 2;
    let mut a = vec![0.0; len + 1];
    let mut b = vec![0.0; len + 1];
    a[0] = init.0[0];
    b[0] = init.0[1];
    b[1] = init.0[2];

    for n in 0..len - 1 {
        let nf = n as f64;
        let ni = n as isize;
        // The factor (z − 3g) removes any āₙ₊₁ contribution here.
        let rhs = total(
            [
                (3.0 * d2 - nf * nf + nf * (2.0 * x + 16.0 * g2) - (x + 8.0 * g2) * (x + 2.0 * g2))
                    * a[n],
                g * (4.0 * nf - 3.0 - 4.0 * x - 14.0 * g2) * at(&a, ni - 1),
                -3.0 * g2 * at(&a, ni - 2),
                s * 2.0 * d * (x + 8.0 * g2 - nf) * b[n],
                s * 6.0 * d * g * at(&b, ni - 1),
            ],
            comp,
        );
        a[n + 1] = rhs / (2.0 * g * (nf + 1.0) * (nf - x - 8.0 * g2));

        {
            let rhs = total(
                [
                    2.0 * g * (nf + 1.0) * (5.0 * x - 5.0 * nf - 3.0 - 32.0 * g2) * b[n + 1],
                    (3.0 * d2 - nf * nf + nf * (2.0 * x - 32.0 * g2)
                        - 6.0 * g2
                        - (x - 10.0 * g2) * (x - 4.0 * g2))
                        * b[n],
                    g * (4.0 * x - 4.0 * nf + 3.0 - 22.0 * g2) * at(&b, ni - 1),
                    -3.0 * g2 * at(&b, ni - 2),
                    -s * 12.0 * d * g * (nf + 1.0) * a[n + 1],
                    s * 2.0 * d * (x - 10.0 * g2 - nf) * a[n],
                    -s * 6.0 * d * g * at(&a, ni - 1),
                ],
                comp,
            );
            b[n + 2] = rhs / (24.0 * g2 * (nf + 2.0) * (nf + 1.0));
        }
    }

    let norm = -1.0 / (3f64.sqrt() * d);
    let mut c1 = Vec::with_capacity(order + 1);
    let mut c1b = Vec::with_capacity(order + 1);
    for n in 0..=order {
        let nf = n as f64;
        let ni = n as isize;
        c1.push(
            norm * total(
                [
                    (nf - x - 2.0 * g2) * a[n],
                    -g * at(&a, ni - 1),
                    2.0 * g * (nf + 1.0) * a[n + 1],
                    s * 2.0 * d * b[n],
                ],
                comp,
            ),
        );
        c1b.push(
            norm * total(
                [
                    (nf - x + 4.0 * g2) * b[n],
                    g * at(&b, ni - 1),
                    4.0 * g * (nf + 1.0) * b[n + 1],
                    s * 2.0 * d * a[n],
                ],
                comp,
            ),
        );
    }
    a.truncate(order + 1);
    b.truncate(order + 1);
    [c1, a, c1b, b]
}

fn max_term(coeffs: &[Coefficients; 3], n: usize, reach_pow: f64) -> f64 {
    coeffs
        .iter()
        .flat_map(|sol| sol.iter())
        .map(|seq| seq[n].abs() * reach_pow)
        .fold(0.0, f64::max)
}

/// First order at which the adaptive criterion holds, if any.
fn adaptive_cutoff(coeffs: &[Coefficients; 3], reach: f64, tol: f64) -> Option<usize> {
    const MIN_ORDER: usize = 8;
    const RUN: usize = 4;
    let len = coeffs[0][0].len();
    let mut running_max = 0.0f64;
    let mut quiet = 0usize;
    let mut pow = 1.0f64;
    for n in 0..len {
        let t = max_term(coeffs, n, pow);
        running_max = running_max.max(t);
        if t <= tol * running_max {
            quiet += 1;
        } else {
            quiet = 0;
        }
        if n >= MIN_ORDER && (running_max == 0.0 || quiet >= RUN) {
            return Some(n);
        }
        pow *= reach;
        if !pow.is_finite() {
            return None;
        }
    }
    None
}

fn estimate_tail_ratio(coeffs: &[Coefficients; 3], g: f64) -> f64 {
    let floor = 1.0 / (2.0 * g);
    let len = coeffs[0][0].len();
    if len < 20 {
        return floor;
    }
    let mut observed = 0.0f64;
    for seq in coeffs.iter().flat_map(|s| s.iter()) {
        let recent = seq[len - 10..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let earlier = seq[len - 20..len - 10].iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if recent > 0.0 && earlier > 0.0 {
            observed = observed.max((recent / earlier).powf(0.1));
        }
    }
    observed.max(floor)
}

fn build_basis(
    params: &ModelParams,
    family: Family,
    parity: Parity,
    x: f64,
    opts: &SeriesOptions,
) -> Result<SeriesBasis> {
    params.require_analytic()?;
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("x must be finite (got {x})")));
    }
    check_pole_distance(params, family, x, opts.pole_guard)?;

    let generate = |order: usize| -> Result<[Coefficients; 3]> {
        let mut sols: [Coefficients; 3] = Default::default();
        for (k, sol) in sols.iter_mut().enumerate() {
            *sol = particular_solution(
                params,
                family,
                parity,
                x,
                InitialData::unit(k),
                order,
                opts.compensated,
            )?;
        }
        Ok(sols)
    };

    let (order, mut coeffs) = match opts.policy {
        OrderPolicy::Fixed(order) => {
            if order > opts.max_order {
                return Err(Error::NonConvergence { max_order: opts.max_order });
            }
            (order, generate(order)?)
        }
        OrderPolicy::Adaptive { tol } => {
            let reach = opts.reach.unwrap_or(opts.margin * 2.0 * params.g());
            let mut trial = 64usize.min(opts.max_order);
            loop {
                let coeffs = generate(trial)?;
                if let Some(n) = adaptive_cutoff(&coeffs, reach, tol) {
                    break (n, coeffs);
                }
                if trial >= opts.max_order {
                    return Err(Error::NonConvergence { max_order: opts.max_order });
                }
                trial = (trial * 2).min(opts.max_order);
            }
        }
    };
    for sol in coeffs.iter_mut() {
        for seq in sol.iter_mut() {
            seq.truncate(order + 1);
        }
    }
    if coeffs.iter().flat_map(|s| s.iter()).flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonConvergence { max_order: order });
    }
    let tail_ratio = estimate_tail_ratio(&coeffs, params.g());
    Ok(SeriesBasis {
        params: *params,
        family,
        parity,
        x,
        center: family.center(params),
        order,
        margin: opts.margin,
        coeffs,
        tail_ratio,
    })
}

/// Basis of solutions analytic at `z = g`.
pub fn phi_basis(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    opts: &SeriesOptions,
) -> Result<SeriesBasis> {
    build_basis(params, Family::Phi, parity, x, opts)
}

/// Basis of solutions analytic at `z = 3g`.
pub fn psi_basis(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    opts: &SeriesOptions,
) -> Result<SeriesBasis> {
    build_basis(params, Family::Psi, parity, x, opts)
}

pub fn basis(
    params: &ModelParams,
    family: Family,
    parity: Parity,
    x: f64,
    opts: &SeriesOptions,
) -> Result<SeriesBasis> {
    build_basis(params, family, parity, x, opts)
}

/// Partial sums (and derivatives) of every basis solution at `z`.
pub fn eval_basis(basis: &SeriesBasis, z: f64) -> Result<BasisValues> {
    let dist = z - basis.center;
    let radius = basis.radius();
    if !(dist.abs() <= basis.margin * radius) {
        return Err(Error::OutsideDisk { z, center: basis.center, radius: basis.margin * radius });
    }
    let ad = dist.abs();
    let q = basis.tail_ratio * ad;
    let mut out = BasisValues::zero();
    let mut bound = 0.0f64;
    for (k, sol) in basis.coeffs.iter().enumerate() {
        for (c, seq) in sol.iter().enumerate() {
            let n_max = seq.len() - 1;
            let mut v = 0.0;
            let mut dv = 0.0;
            let mut abs_sum = 0.0;
            for &cn in seq.iter().rev() {
                dv = dv * dist + v;
                v = v * dist + cn;
                abs_sum = abs_sum * ad + cn.abs();
            }
            out.values[k][c] = v;
            out.derivatives[k][c] = dv;
            let last = seq[n_max].abs() * ad.powi(n_max as i32);
            let truncation = if q < 1.0 { last * q / (1.0 - q) } else { f64::INFINITY };
            let rounding = 2.0 * (n_max as f64 + 1.0) * f64::EPSILON * abs_sum;
            bound = bound.max(truncation + rounding);
        }
    }
    out.tail_bound = bound;
    Ok(out)
}

fn check_ordinary(params: &ModelParams, z: f64) -> Result<()> {
    let g = params.g();
    for p in [g, -g, 3.0 * g, -3.0 * g] {
        if (z - p).abs() <= 1e-12 * g.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularPoint { z });
        }
    }
    Ok(())
}

/// Residuals of the four first-order equations at `z`.
///
/// `values` and `derivatives` hold `(φ₁, φ₂, φ̄₁, φ̄₂)` and their
/// derivatives, all evaluated at `z`.
pub fn ode_residual(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    z: f64,
    values: &[f64; 4],
    derivatives: &[f64; 4],
) -> Result<[f64; 4]> {
    check_ordinary(params, z)?;
    let t = ode_terms(params, parity, x, z, values, derivatives);
    Ok(std::array::from_fn(|i| t[i].iter().sum()))
}

/// Sum of absolute term magnitudes per equation, the scale for relative residuals.
pub fn ode_scale(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    z: f64,
    values: &[f64; 4],
    derivatives: &[f64; 4],
) -> [f64; 4] {
    let t = ode_terms(params, parity, x, z, values, derivatives);
    std::array::from_fn(|i| t[i].iter().map(|v| v.abs()).sum())
}

fn ode_terms(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    z: f64,
    v: &[f64; 4],
    dv: &[f64; 4],
) -> [[f64; 4]; 4] {
    let g = params.g();
    let d = params.delta();
    let s = parity.sign();
    let e = params.to_energy(x);
    let r3d = 3f64.sqrt() * d;
    [
        [(z - 3.0 * g) * dv[PHI1], -(e + 3.0 * g * z) * v[PHI1], r3d * v[PHI2], 0.0],
        [
            (z - g) * dv[PHI2],
            -(e + g * z) * v[PHI2],
            r3d * v[PHI1],
            s * 2.0 * d * v[PHI2_BAR],
        ],
        [(z + 3.0 * g) * dv[PHI1_BAR], -(e - 3.0 * g * z) * v[PHI1_BAR], r3d * v[PHI2_BAR], 0.0],
        [
            (z + g) * dv[PHI2_BAR],
            -(e - g * z) * v[PHI2_BAR],
            r3d * v[PHI1_BAR],
            s * 2.0 * d * v[PHI2],
        ],
    ]
}
