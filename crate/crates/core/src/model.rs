//! Model parameters, spin matrices, baselines and the `x = E + g²` shift.
//!
//! Energies are in units of the field frequency (ω = 1). The coupling `g`
//! and the level splitting `delta` (Δ = ω₀/2) are the only physical knobs.
//! The three-qubit coupling of the full Hamiltonian is `g' = √3·g`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Coupling `g` and splitting `delta` of the spin-3/2 Dicke Hamiltonian.
///
/// Zero values are accepted here (the oracle handles the decoupled and
/// displaced-oscillator limits); the series pipeline calls
/// [`ModelParams::require_analytic`] and rejects them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    g: f64,
    delta: f64,
}

impl ModelParams {
    pub fn new(g: f64, delta: f64) -> Result<Self> {
        if !g.is_finite() || !delta.is_finite() || g < 0.0 || delta < 0.0 {
            return Err(Error::InvalidParams(format!(
                "g and delta must be finite and non-negative (g = {g}, delta = {delta})"
            )));
        }
        Ok(Self { g, delta })
    }

    #[inline]
    pub fn g(&self) -> f64 {
        self.g
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Coupling of the three-qubit Hamiltonian, `g' = √3·g`.
    pub fn g_prime(&self) -> f64 {
        3f64.sqrt() * self.g
    }

    /// The series recurrences divide by Δ and merge singular points at g = 0.
    pub fn require_analytic(&self) -> Result<()> {
        if self.g > 0.0 && self.delta > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "series solutions need g > 0 and delta > 0 (g = {}, delta = {})",
                self.g, self.delta
            )))
        }
    }

    pub fn to_x(&self, energy: f64) -> f64 {
        energy + self.g * self.g
    }

    pub fn to_energy(&self, x: f64) -> f64 {
        x - self.g * self.g
    }

    /// Position of the second-kind baseline with index `n`, `x = n − 8g²`.
    pub fn second_kind_position(&self, n: u32) -> f64 {
        n as f64 - 8.0 * self.g * self.g
    }
}

/// Parity chain label, the ±1 eigenvalue of `P = exp(iπa†a)⊗R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Parity {
    Plus,
    Minus,
}

impl Parity {
    pub const BOTH: [Parity; 2] = [Parity::Plus, Parity::Minus];

    /// `+1.0` or `-1.0`; multiplies every barred/unbarred cross term.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Parity::Plus => 1.0,
            Parity::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Parity::Plus => "+",
            Parity::Minus => "-",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Parity::Plus => Parity::Minus,
            Parity::Minus => Parity::Plus,
        }
    }
}

impl std::fmt::Display for Parity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" | "plus" | "Plus" | "even" | "+1" => Ok(Parity::Plus),
            "-" | "minus" | "Minus" | "odd" | "-1" => Ok(Parity::Minus),
            other => Err(Error::InvalidArgument(format!("unknown parity '{other}'"))),
        }
    }
}

/// A point of the spectrum in both coordinates, `x = e + g²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralPoint {
    pub x: f64,
    pub e: f64,
}

impl SpectralPoint {
    pub fn from_x(params: &ModelParams, x: f64) -> Self {
        Self { x, e: params.to_energy(x) }
    }

    pub fn from_energy(params: &ModelParams, e: f64) -> Self {
        Self { x: params.to_x(e), e }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    EtoX,
    XtoE,
}

pub fn x_energy(params: &ModelParams, value: f64, direction: Direction) -> f64 {
    match direction {
        Direction::EtoX => params.to_x(value),
        Direction::XtoE => params.to_energy(value),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BaselineKind {
    /// `x = n`, `n ≥ 1`: the φ recurrence degenerates.
    First,
    /// `x = n − 8g²`, `n ≥ 0`: the ψ recurrence degenerates.
    Second,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::First => "first",
            BaselineKind::Second => "second",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub n: u32,
    pub x: f64,
    /// A baseline of the other kind sits at the same position (8g² integer).
    pub collides: bool,
}

impl Baseline {
    /// Energy of the exceptional eigenvalue on this baseline:
    /// `n − g²` (first kind) or `n − 9g²` (second kind).
    pub fn exceptional_energy(&self, params: &ModelParams) -> f64 {
        params.to_energy(self.x)
    }

    /// Checks that the stored position agrees with `kind`, `n` and `params`.
    pub fn is_consistent(&self, params: &ModelParams) -> bool {
        let expected = match self.kind {
            BaselineKind::First => self.n as f64,
            BaselineKind::Second => params.second_kind_position(self.n),
        };
        let ok_index = !(self.kind == BaselineKind::First && self.n == 0);
        ok_index && (self.x - expected).abs() <= 1e-12 * expected.abs().max(1.0)
    }
}

const COLLISION_TOL: f64 = 1e-12;

/// All baselines with position in `[x_lo, x_hi]`, sorted by position.
pub fn baselines(params: &ModelParams, x_lo: f64, x_hi: f64) -> Vec<Baseline> {
    if !(x_lo < x_hi) {
        return Vec::new();
    }
    let shift = 8.0 * params.g() * params.g();
    let mut out = Vec::new();

    let first_lo = x_lo.ceil().max(1.0);
    let mut n = first_lo;
    while n <= x_hi {
        out.push(Baseline { kind: BaselineKind::First, n: n as u32, x: n, collides: false });
        n += 1.0;
    }

    let second_lo = (x_lo + shift).ceil().max(0.0);
    let mut m = second_lo as u32;
    loop {
        let x = params.second_kind_position(m);
        if x > x_hi {
            break;
        }
        if x >= x_lo {
            out.push(Baseline { kind: BaselineKind::Second, n: m, x, collides: false });
        }
        m += 1;
    }

    out.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.kind.cmp(&b.kind)));
    for i in 1..out.len() {
        let (a, b) = (out[i - 1], out[i]);
        if a.kind != b.kind && (a.x - b.x).abs() <= COLLISION_TOL * a.x.abs().max(1.0) {
            out[i - 1].collides = true;
            out[i].collides = true;
        }
    }
    out
}

/// The baseline of the given kind and index at these parameters.
pub fn baseline(params: &ModelParams, kind: BaselineKind, n: u32) -> Baseline {
    let x = match kind {
        BaselineKind::First => n as f64,
        BaselineKind::Second => params.second_kind_position(n),
    };
    let collides = baselines(params, x - 1e-9, x + 1e-9).iter().any(|b| b.kind != kind && b.collides);
    Baseline { kind, n, x, collides }
}

/// Nearest baseline to `x` (within a window of ±1 around it).
pub fn nearest_baseline(params: &ModelParams, x: f64) -> Option<Baseline> {
    baselines(params, x - 1.0, x + 1.0)
        .into_iter()
        .min_by(|a, b| (a.x - x).abs().total_cmp(&(b.x - x).abs()))
}

/// `(J_z, J_x)` for spin `s = two_s / 2`, in the basis `m = s, s−1, …, −s`.
pub fn spin_matrices(two_s: u32) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if two_s != 1 && two_s != 3 {
        return Err(Error::InvalidSpin(two_s));
    }
    let dim = two_s as usize + 1;
    let s = two_s as f64 / 2.0;
    let jz = DMatrix::from_fn(dim, dim, |i, j| if i == j { s - i as f64 } else { 0.0 });
    let mut jx = DMatrix::zeros(dim, dim);
    for i in 0..dim - 1 {
        // <m+1|J+|m> with m = s - i - 1
        let m = s - i as f64 - 1.0;
        let elem = 0.5 * (s * (s + 1.0) - m * (m + 1.0)).sqrt();
        jx[(i, i + 1)] = elem;
        jx[(i + 1, i)] = elem;
    }
    Ok((jz, jx))
}
