//! Truncated-Fock diagonalization used as ground truth.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{spin_matrices, ModelParams, Parity};

#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianKind {
    /// `H± = a†a + Δ[[0, √3], [√3, ±2T̂]] − g(a + a†)·diag(3, 1)`.
    ParityBlock(Parity),
    /// `a†a + 2ΔJ_x + 2g(a + a†)J_z` for spin 3/2.
    SpinBoson32,
    /// Spin-1/2 sector: `a†a + Δσ_z + g(a + a†)σ_x`.
    RabiSector,
    /// Parity chain of the spin-1/2 sector: `a†a ± ΔT̂ − g(a + a†)`.
    RabiParityBlock(Parity),
    /// Three qubits: `a†a + ΔΣσᶻᵢ + g(a + a†)Σσˣᵢ`, with `g = g′/√3`.
    FullN3,
    /// Fixed matrix supplied by the caller; cannot be re-truncated.
    Custom(DMatrix<f64>),
}

impl HamiltonianKind {
    /// Number of spin (or internal) states per photon number.
    pub fn spin_dim(&self) -> usize {
        match self {
            HamiltonianKind::ParityBlock(_) | HamiltonianKind::RabiSector => 2,
            HamiltonianKind::SpinBoson32 => 4,
            HamiltonianKind::RabiParityBlock(_) => 1,
            HamiltonianKind::FullN3 => 8,
            HamiltonianKind::Custom(_) => 1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            HamiltonianKind::ParityBlock(p) => format!("parity-block{}", p.symbol()),
            HamiltonianKind::SpinBoson32 => "spin-boson-3/2".into(),
            HamiltonianKind::RabiSector => "rabi-sector".into(),
            HamiltonianKind::RabiParityBlock(p) => format!("rabi-parity-block{}", p.symbol()),
            HamiltonianKind::FullN3 => "full-n3".into(),
            HamiltonianKind::Custom(_) => "custom".into(),
        }
    }
}

impl std::str::FromStr for HamiltonianKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "parity-block+" | "plus" | "+" => HamiltonianKind::ParityBlock(Parity::Plus),
            "parity-block-" | "minus" | "-" => HamiltonianKind::ParityBlock(Parity::Minus),
            "spin-boson-3/2" | "sb32" => HamiltonianKind::SpinBoson32,
            "rabi-sector" | "rabi" => HamiltonianKind::RabiSector,
            "rabi-parity-block+" | "rabi+" => HamiltonianKind::RabiParityBlock(Parity::Plus),
            "rabi-parity-block-" | "rabi-" => HamiltonianKind::RabiParityBlock(Parity::Minus),
            "full-n3" | "full" => HamiltonianKind::FullN3,
            other => return Err(Error::InvalidArgument(format!("unknown hamiltonian kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedHamiltonian {
    pub kind: HamiltonianKind,
    pub cutoff: usize,
    pub params: ModelParams,
    pub matrix: DMatrix<f64>,
}

/// `(a + a†)` on photon numbers `0..=cutoff`.
fn position(cutoff: usize) -> DMatrix<f64> {
    let n = cutoff + 1;
    let mut m = DMatrix::zeros(n, n);
    for k in 1..n {
        let v = (k as f64).sqrt();
        m[(k - 1, k)] = v;
        m[(k, k - 1)] = v;
    }
    m
}

fn number(cutoff: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_fn(cutoff + 1, |k, _| k as f64))
}

fn photon_parity(cutoff: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_fn(cutoff + 1, |k, _| {
        if k % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }))
}

/// `A_boson ⊗ B_spin` with basis index `n·d + s`.
fn kron(boson: &DMatrix<f64>, spin: &DMatrix<f64>) -> DMatrix<f64> {
    boson.kronecker(spin)
}

fn qubit_sum(op: &DMatrix<f64>, qubits: usize) -> DMatrix<f64> {
    let id = DMatrix::<f64>::identity(2, 2);
    let dim = 1 << qubits;
    let mut total = DMatrix::zeros(dim, dim);
    for i in 0..qubits {
        let mut term = DMatrix::<f64>::identity(1, 1);
        for j in 0..qubits {
            term = term.kronecker(if i == j { op } else { &id });
        }
        total += term;
    }
    total
}

/// Dense truncated Hamiltonian with photon numbers `0..=cutoff`.
pub fn build_truncated(
    params: &ModelParams,
    kind: HamiltonianKind,
    cutoff: usize,
) -> Result<TruncatedHamiltonian> {
    if cutoff < 1 {
        return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
    }
    let (g, delta) = (params.g(), params.delta());
    let num = number(cutoff);
    let pos = position(cutoff);
    let tee = photon_parity(cutoff);
    let matrix = match &kind {
        HamiltonianKind::ParityBlock(p) => {
            let s3 = 3f64.sqrt();
            let mut spin_mix = DMatrix::zeros(2, 2);
            spin_mix[(0, 1)] = s3 * delta;
            spin_mix[(1, 0)] = s3 * delta;
            let mut lower = DMatrix::zeros(2, 2);
            lower[(1, 1)] = 2.0 * p.sign() * delta;
            let coupling = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
            kron(&num, &DMatrix::identity(2, 2))
                + kron(&DMatrix::identity(cutoff + 1, cutoff + 1), &spin_mix)
                + kron(&tee, &lower)
                - kron(&pos, &coupling) * g
        }
        HamiltonianKind::SpinBoson32 => {
            let (jz, jx) = spin_matrices(3)?;
            kron(&num, &DMatrix::identity(4, 4))
                + kron(&DMatrix::identity(cutoff + 1, cutoff + 1), &jx) * (2.0 * delta)
                + kron(&pos, &jz) * (2.0 * g)
        }
        HamiltonianKind::RabiSector => {
            let (jz, jx) = spin_matrices(1)?;
            kron(&num, &DMatrix::identity(2, 2))
                + kron(&DMatrix::identity(cutoff + 1, cutoff + 1), &jz) * (2.0 * delta)
                + kron(&pos, &jx) * (2.0 * g)
        }
        HamiltonianKind::RabiParityBlock(p) => &num + &tee * (p.sign() * delta) - &pos * g,
        HamiltonianKind::FullN3 => {
            let sz = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
            let sx = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
            kron(&num, &DMatrix::identity(8, 8))
                + kron(&DMatrix::identity(cutoff + 1, cutoff + 1), &qubit_sum(&sz, 3)) * delta
                + kron(&pos, &qubit_sum(&sx, 3)) * (params.g_prime() / 3f64.sqrt())
        }
        HamiltonianKind::Custom(m) => {
            if !m.is_square() {
                return Err(Error::InvalidArgument("custom matrix must be square".into()));
            }
            m.clone()
        }
    };
    Ok(TruncatedHamiltonian { kind, cutoff, params: *params, matrix })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub threshold: f64,
    /// Verification cutoff is `⌈factor · N_c⌉`.
    pub factor: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { threshold: 1e-9, factor: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSpectrum {
    /// Lowest energies, ascending.
    pub eigenvalues: Vec<f64>,
    pub cutoff_pair: (usize, usize),
    /// `|E(N_c) − E(N_c′)|` per eigenvalue; empty when not certified.
    pub deltas: Vec<f64>,
    /// Largest `‖Hv − Ev‖ / ‖H‖` over the returned pairs.
    pub max_residual: f64,
}

impl OracleSpectrum {
    /// Energies shifted to `x = E + g²`.
    pub fn x_values(&self, params: &ModelParams) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| params.to_x(*e)).collect()
    }
}

fn lowest(h: &DMatrix<f64>, k: usize) -> (Vec<f64>, f64) {
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let norm = h.norm().max(f64::MIN_POSITIVE);
    let mut values = Vec::with_capacity(k);
    let mut worst = 0.0f64;
    for &i in order.iter().take(k) {
        let e = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        let r = (h * v - v * e).norm() / norm;
        worst = worst.max(r);
        values.push(e);
    }
    (values, worst)
}

/// Lowest `k` eigenvalues, optionally certified against a larger cutoff.
pub fn spectrum_oracle(
    h: &TruncatedHamiltonian,
    k: usize,
    certify: bool,
    opts: &OracleOptions,
) -> Result<OracleSpectrum> {
    let dim = h.matrix.nrows();
    let limit = if matches!(h.kind, HamiltonianKind::Custom(_)) { dim } else { dim / 2 };
    if k == 0 || k > limit {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={limit} for a {dim}-dimensional {}",
            h.kind.label()
        )));
    }
    let (eigenvalues, max_residual) = lowest(&h.matrix, k);
    if !certify {
        return Ok(OracleSpectrum {
            eigenvalues,
            cutoff_pair: (h.cutoff, h.cutoff),
            deltas: Vec::new(),
            max_residual,
        });
    }
    if matches!(h.kind, HamiltonianKind::Custom(_)) {
        return Err(Error::InvalidArgument("a custom matrix cannot be certified".into()));
    }
    let bigger = (opts.factor * h.cutoff as f64).ceil() as usize;
    let h2 = build_truncated(&h.params, h.kind.clone(), bigger)?;
    let (check, r2) = lowest(&h2.matrix, k);
    let deltas: Vec<f64> = eigenvalues.iter().zip(&check).map(|(a, b)| (a - b).abs()).collect();
    if let Some((index, &delta)) =
        deltas.iter().enumerate().find(|(_, d)| **d > opts.threshold || d.is_nan())
    {
        return Err(Error::CertificationFailure { index, delta, threshold: opts.threshold });
    }
    Ok(OracleSpectrum {
        eigenvalues,
        cutoff_pair: (h.cutoff, bigger),
        deltas,
        max_residual: max_residual.max(r2),
    })
}

/// Convenience: certified lowest `k` values of `kind` in `x = E + g²`.
pub fn oracle_x(
    params: &ModelParams,
    kind: HamiltonianKind,
    cutoff: usize,
    k: usize,
) -> Result<Vec<f64>> {
    let h = build_truncated(params, kind, cutoff)?;
    Ok(spectrum_oracle(&h, k, true, &OracleOptions::default())?.x_values(params))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub full: Vec<f64>,
    /// Lowest `k` of `2 × Rabi ∪ S=3/2`, ascending.
    pub union: Vec<f64>,
    pub max_distance: f64,
    /// Rabi eigenvalues (within the compared range) found fewer than twice in the full spectrum.
    pub multiplicity_violations: Vec<f64>,
}

/// Compares the full three-qubit spectrum with its sector decomposition.
pub fn decomposition_check(
    params: &ModelParams,
    cutoff: usize,
    k: usize,
    tol: f64,
) -> Result<DecompositionReport> {
    let full_h = build_truncated(params, HamiltonianKind::FullN3, cutoff)?;
    let rabi_h = build_truncated(params, HamiltonianKind::RabiSector, cutoff)?;
    let sb_h = build_truncated(params, HamiltonianKind::SpinBoson32, cutoff)?;
    let opts = OracleOptions::default();
    let full = spectrum_oracle(&full_h, k, false, &opts)?.eigenvalues;
    let rabi = spectrum_oracle(&rabi_h, k.min(cutoff + 1), false, &opts)?.eigenvalues;
    let sb = spectrum_oracle(&sb_h, k.min(2 * (cutoff + 1)), false, &opts)?.eigenvalues;

    let mut union: Vec<f64> = rabi.iter().chain(&rabi).chain(&sb).copied().collect();
    union.sort_by(f64::total_cmp);
    union.truncate(k);

    let max_distance =
        full.iter().zip(&union).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
    if full.len() != union.len() || max_distance > tol {
        let unmatched = full
            .iter()
            .zip(&union)
            .filter(|(a, b)| (*a - *b).abs() > tol)
            .count()
            + full.len().abs_diff(union.len());
        return Err(Error::MatchFailure { unmatched, max_distance });
    }
    let top = *full.last().unwrap_or(&f64::NEG_INFINITY);
    let multiplicity_violations = rabi
        .iter()
        .filter(|r| **r < top - tol)
        .filter(|r| full.iter().filter(|f| (*f - *r).abs() <= tol).count() < 2)
        .copied()
        .collect();
    Ok(DecompositionReport { full, union, max_distance, multiplicity_violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(g: f64, d: f64) -> ModelParams {
        ModelParams::new(g, d).unwrap()
    }

    #[test]
    fn dimensions_and_symmetry() {
        for (kind, d) in [
            (HamiltonianKind::ParityBlock(Parity::Plus), 2),
            (HamiltonianKind::SpinBoson32, 4),
            (HamiltonianKind::RabiSector, 2),
            (HamiltonianKind::RabiParityBlock(Parity::Minus), 1),
            (HamiltonianKind::FullN3, 8),
        ] {
            let h = build_truncated(&p(0.3, 0.7), kind, 10).unwrap();
            assert_eq!(h.matrix.nrows(), d * 11);
            assert!((&h.matrix - h.matrix.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn custom_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let h = build_truncated(&p(0.1, 0.1), HamiltonianKind::Custom(m), 1).unwrap();
        let s = spectrum_oracle(&h, 2, false, &OracleOptions::default()).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 2.0]);
        assert!(spectrum_oracle(&h, 4, false, &OracleOptions::default()).is_err());
        assert!(spectrum_oracle(&h, 2, true, &OracleOptions::default()).is_err());
    }

    #[test]
    fn k_limited_to_lower_half() {
        let h = build_truncated(&p(0.1, 0.1), HamiltonianKind::RabiSector, 4).unwrap();
        assert!(spectrum_oracle(&h, 5, false, &OracleOptions::default()).is_ok());
        assert!(spectrum_oracle(&h, 6, false, &OracleOptions::default()).is_err());
    }

    #[test]
    fn decoupled_spin_boson() {
        let params = ModelParams::new(0.0, 0.7).unwrap();
        let h = build_truncated(&params, HamiltonianKind::SpinBoson32, 20).unwrap();
        let s = spectrum_oracle(&h, 8, false, &OracleOptions::default()).unwrap();
        let mut expect: Vec<f64> = (0..10)
            .flat_map(|n| [-1.5, -0.5, 0.5, 1.5].map(|m| n as f64 + 2.0 * 0.7 * m))
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in s.eigenvalues.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn zero_cutoff_rejected() {
        assert!(build_truncated(&p(0.1, 0.1), HamiltonianKind::FullN3, 0).is_err());
        assert!("bogus".parse::<HamiltonianKind>().is_err());
    }
}
