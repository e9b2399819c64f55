//! Connection matrix, G-function and kernel diagnostics.
//!
//! Columns 1–3 of `M±(x, z₀)` hold the ψ basis at `z₀`, columns 4–6 the
//! negated φ basis at `z₀`; rows 5–6 carry `δφⱼ⁽ᵏ⁾(0) = φ̄ⱼ⁽ᵏ⁾(0) − φⱼ⁽ᵏ⁾(0)`
//! for the φ columns and zeros for the ψ columns. A non-trivial kernel
//! `(c₁, c₂, c₃, γ₁, γ₂, γ₃)` glues the four local expansions into an entire
//! function, so `det M±` vanishes exactly on the regular spectrum.
//!
//! Raw determinants over- and underflow quickly, so each column is divided
//! by its largest absolute entry and the logarithms of those positive
//! factors are accumulated separately. Signs and zeros are unaffected.

use nalgebra::{DMatrix, Matrix6, Vector6};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelParams, Parity};
use crate::series::{phi_basis, psi_basis, SeriesOptions, PHI1, PHI1_BAR, PHI2, PHI2_BAR};

/// Default matching point `z₀ = 2g`.
pub fn default_z0(params: &ModelParams) -> f64 {
    2.0 * params.g()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionMatrix {
    entries: Matrix6<f64>,
    column_scales: [f64; 6],
    pub x: f64,
    pub z0: f64,
    pub parity: Parity,
    /// Largest series tail bound among the evaluations used.
    pub tail_bound: f64,
}

impl ConnectionMatrix {
    /// Builds from a raw matrix, normalizing each column by its max-abs entry.
    pub fn from_raw(raw: Matrix6<f64>, x: f64, z0: f64, parity: Parity) -> Self {
        let mut entries = raw;
        let mut column_scales = [1.0; 6];
        for j in 0..6 {
            let scale = raw.column(j).amax();
            if scale > 0.0 && scale.is_finite() {
                column_scales[j] = scale;
                entries.column_mut(j).scale_mut(1.0 / scale);
            }
        }
        Self { entries, column_scales, x, z0, parity, tail_bound: 0.0 }
    }

    /// Normalized entries (every column has max-abs 1).
    pub fn entries(&self) -> &Matrix6<f64> {
        &self.entries
    }

    pub fn column_scales(&self) -> &[f64; 6] {
        &self.column_scales
    }

    pub fn log_scale(&self) -> f64 {
        self.column_scales.iter().map(|s| s.ln()).sum()
    }

    /// De-normalized matrix.
    pub fn raw(&self) -> Matrix6<f64> {
        let mut m = self.entries;
        for j in 0..6 {
            m.column_mut(j).scale_mut(self.column_scales[j]);
        }
        m
    }

    pub fn g_value(&self) -> GValue {
        GValue { g_norm: self.entries.determinant(), log_scale: self.log_scale() }
    }

    /// Converts a kernel vector from normalized to raw coordinates,
    /// returning `(c, γ)`.
    pub fn raw_coefficients(&self, kernel: &KernelVector) -> ([f64; 3], [f64; 3]) {
        let v = kernel.vector();
        let raw: [f64; 6] = std::array::from_fn(|j| v[j] / self.column_scales[j]);
        ([raw[0], raw[1], raw[2]], [raw[3], raw[4], raw[5]])
    }
}

/// `det M = g_norm · exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GValue {
    pub g_norm: f64,
    pub log_scale: f64,
}

impl GValue {
    /// `ln |det M|`.
    pub fn log_abs(&self) -> f64 {
        self.g_norm.abs().ln() + self.log_scale
    }

    /// The de-normalized determinant; may overflow to ±∞.
    pub fn value(&self) -> f64 {
        self.g_norm * self.log_scale.exp()
    }

    /// The determinant divided by `exp(reference)`.
    pub fn value_relative(&self, reference: f64) -> f64 {
        self.g_norm * (self.log_scale - reference).exp()
    }
}

fn check_matching_point(params: &ModelParams, z0: f64) -> Result<()> {
    let g = params.g();
    if !(z0 > g && z0 < 3.0 * g) {
        return Err(Error::OutsideDisk { z: z0, center: 2.0 * g, radius: g });
    }
    Ok(())
}

/// Assembles `M±(x, z₀)`.
pub fn connection_matrix(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    z0: f64,
    opts: &SeriesOptions,
) -> Result<ConnectionMatrix> {
    params.require_analytic()?;
    check_matching_point(params, z0)?;
    let g = params.g();
    let phi_opts = match opts.reach {
        Some(_) => *opts,
        None => opts.with_reach((z0 - g).abs().max(g)),
    };
    let psi_opts = match opts.reach {
        Some(_) => *opts,
        None => opts.with_reach((z0 - 3.0 * g).abs()),
    };
    let phi = phi_basis(params, parity, x, &phi_opts)?;
    let psi = psi_basis(params, parity, x, &psi_opts)?;
    let phi_z0 = phi.eval(z0)?;
    let psi_z0 = psi.eval(z0)?;
    let phi_0 = phi.eval(0.0)?;

    let mut raw = Matrix6::zeros();
    for k in 0..3 {
        for (row, comp) in [PHI1, PHI2, PHI1_BAR, PHI2_BAR].into_iter().enumerate() {
            raw[(row, k)] = psi_z0.values[k][comp];
            raw[(row, 3 + k)] = -phi_z0.values[k][comp];
        }
        raw[(4, 3 + k)] = phi_0.values[k][PHI1_BAR] - phi_0.values[k][PHI1];
        raw[(5, 3 + k)] = phi_0.values[k][PHI2_BAR] - phi_0.values[k][PHI2];
    }
    let mut m = ConnectionMatrix::from_raw(raw, x, z0, parity);
    m.tail_bound = phi_z0.tail_bound.max(psi_z0.tail_bound).max(phi_0.tail_bound);
    Ok(m)
}

/// The normalized G-function `G±(x, z₀)`.
pub fn g_value(
    params: &ModelParams,
    parity: Parity,
    x: f64,
    z0: f64,
    opts: &SeriesOptions,
) -> Result<GValue> {
    Ok(connection_matrix(params, parity, x, z0, opts)?.g_value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelVector {
    pub c: [f64; 3],
    pub gamma: [f64; 3],
    pub kernel_dim: usize,
    /// Smallest and second-smallest singular values, relative to the largest.
    pub smallest_singular_values: [f64; 2],
    /// `‖M v‖` for the returned unit vector.
    pub residual: f64,
}

impl KernelVector {
    /// `(c₁, c₂, c₃, γ₁, γ₂, γ₃)`.
    pub fn vector(&self) -> [f64; 6] {
        [self.c[0], self.c[1], self.c[2], self.gamma[0], self.gamma[1], self.gamma[2]]
    }
}

/// Right singular vector of the smallest singular value, plus the number
/// of singular values below `tol` times the largest.
pub fn kernel_of(m: &Matrix6<f64>, tol: f64) -> KernelVector {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let largest = svd.singular_values[order[5]];
    let rel = |i: usize| if largest > 0.0 { svd.singular_values[i] / largest } else { 0.0 };
    let kernel_dim = order.iter().filter(|&&i| rel(i) < tol).count();
    let row = v_t.row(order[0]);
    let v = Vector6::from_iterator(row.iter().copied());
    let residual = (m * v).norm();
    KernelVector {
        c: [v[0], v[1], v[2]],
        gamma: [v[3], v[4], v[5]],
        kernel_dim,
        smallest_singular_values: [rel(order[0]), rel(order[1])],
        residual,
    }
}

/// Kernel of the normalized connection matrix.
pub fn kernel_vector(m: &ConnectionMatrix, tol: f64) -> KernelVector {
    kernel_of(m.entries(), tol)
}

/// `p(λ) = det(M − λI)` evaluated at λ = 0 and its linear coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharPoly {
    pub det: f64,
    pub c1: f64,
}

/// Determinant and λ-coefficient of `det(M − λI)`.
///
/// The linear coefficient is minus the sum of the six principal 5×5 minors.
pub fn char_poly_of(m: &Matrix6<f64>) -> CharPoly {
    let dm = DMatrix::from_column_slice(6, 6, m.as_slice());
    let mut minors = 0.0;
    for i in 0..6 {
        minors += dm.clone().remove_row(i).remove_column(i).determinant();
    }
    CharPoly { det: m.determinant(), c1: -minors }
}

/// Same as [`char_poly_of`] on the normalized matrix.
pub fn char_poly_c1(m: &ConnectionMatrix) -> CharPoly {
    char_poly_of(m.entries())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(0.25, 0.7).unwrap()
    }

    #[test]
    fn zero_block_is_exact() {
        let p = params();
        for parity in Parity::BOTH {
            for x in [-1.3, 0.3, 2.2, 4.9] {
                let m = connection_matrix(&p, parity, x, 0.5, &SeriesOptions::default()).unwrap();
                for r in 4..6 {
                    for c in 0..3 {
                        assert_eq!(m.entries()[(r, c)], 0.0);
                        assert_eq!(m.raw()[(r, c)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn delta_rows_match_basis_values() {
        let p = params();
        let opts = SeriesOptions::default();
        let m = connection_matrix(&p, Parity::Plus, 0.3, 0.5, &opts).unwrap();
        let phi = phi_basis(&p, Parity::Plus, 0.3, &opts.with_reach(0.25)).unwrap();
        let v = phi.eval(0.0).unwrap();
        let raw = m.raw();
        for k in 0..3 {
            let d1 = v.values[k][PHI1_BAR] - v.values[k][PHI1];
            let d2 = v.values[k][PHI2_BAR] - v.values[k][PHI2];
            assert!((raw[(4, 3 + k)] - d1).abs() <= 1e-12 * d1.abs().max(1.0));
            assert!((raw[(5, 3 + k)] - d2).abs() <= 1e-12 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn normalization_round_trip_and_sign() {
        let p = params();
        let m = connection_matrix(&p, Parity::Minus, 1.37, 0.5, &SeriesOptions::default())
            .unwrap();
        assert!(m.column_scales().iter().all(|s| *s > 0.0));
        for j in 0..6 {
            assert!((m.entries().column(j).amax() - 1.0).abs() < 1e-15);
        }
        let raw = m.raw();
        let raw_det = raw.determinant();
        let gv = m.g_value();
        assert_eq!(raw_det.signum(), gv.g_norm.signum());
        assert!((gv.value() - raw_det).abs() <= 1e-10 * raw_det.abs());
        // rescaling columns by other positive factors keeps the sign
        let mut other = raw;
        for j in 0..6 {
            other.column_mut(j).scale_mut(0.1 + j as f64);
        }
        assert_eq!(other.determinant().signum(), raw_det.signum());
    }

    #[test]
    fn matching_point_must_lie_between_centers() {
        let p = params();
        let opts = SeriesOptions::default();
        assert!(matches!(
            connection_matrix(&p, Parity::Plus, 0.3, 0.2, &opts),
            Err(Error::OutsideDisk { .. })
        ));
        assert!(matches!(
            connection_matrix(&p, Parity::Plus, 0.3, 0.8, &opts),
            Err(Error::OutsideDisk { .. })
        ));
        assert!(matches!(
            connection_matrix(&p, Parity::Plus, 1.0, 0.5, &opts),
            Err(Error::PoleProximity { .. })
        ));
    }

    #[test]
    fn kernel_of_identity_is_trivial() {
        let k = kernel_of(&Matrix6::identity(), 1e-10);
        assert_eq!(k.kernel_dim, 0);
    }

    #[test]
    fn kernel_of_zero_column_is_its_axis() {
        let mut m = Matrix6::<f64>::identity();
        m[(0, 0)] = 2.0;
        m[(1, 3)] = 0.5;
        m.column_mut(4).fill(0.0);
        let k = kernel_of(&m, 1e-10);
        assert_eq!(k.kernel_dim, 1);
        let v = k.vector();
        for (j, vj) in v.iter().enumerate() {
            let expected = if j == 4 { 1.0 } else { 0.0 };
            assert!((vj.abs() - expected).abs() < 1e-12, "{v:?}");
        }
        assert!(k.residual < 1e-14);
    }

    #[test]
    fn char_poly_identity() {
        let cp = char_poly_of(&Matrix6::identity());
        assert_eq!(cp.det, 1.0);
        assert!((cp.c1 + 6.0).abs() < 1e-14);
    }

    #[test]
    fn char_poly_rank_four_diagonal() {
        let m = Matrix6::from_diagonal(&Vector6::new(0.0, 0.0, 1.5, -2.0, 0.3, 4.0));
        let cp = char_poly_of(&m);
        assert_eq!(cp.det, 0.0);
        assert_eq!(cp.c1, 0.0);
    }

    #[test]
    fn char_poly_matches_finite_difference() {
        // deterministic pseudo-random matrix
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        for _ in 0..5 {
            let m = Matrix6::from_fn(|_, _| next());
            let cp = char_poly_of(&m);
            let p = |lam: f64| (m - Matrix6::identity() * lam).determinant();
            let h = 1e-4;
            // 4th-order central difference
            let fd = (-p(2.0 * h) + 8.0 * p(h) - 8.0 * p(-h) + p(-2.0 * h)) / (12.0 * h);
            assert!((fd - cp.c1).abs() <= 1e-8 * cp.c1.abs().max(1e-3), "{fd} vs {}", cp.c1);
            assert!((p(0.0) - cp.det).abs() < 1e-14);
        }
    }
}
