use thiserror::Error;

use crate::model::BaselineKind;

/// Errors raised by the analytic pipeline and the truncated-Fock oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported spin representation 2s = {0} (expected 1 or 3)")]
    InvalidSpin(u32),

    #[error("x = {x} lies within {guard:e} of a {kind:?}-kind baseline at {baseline}")]
    PoleProximity {
        x: f64,
        baseline: f64,
        kind: BaselineKind,
        guard: f64,
    },

    #[error("series did not converge below tolerance within {max_order} terms")]
    NonConvergence { max_order: usize },

    #[error("z = {z} lies outside the admissible disk |z - {center}| < {radius}")]
    OutsideDisk { z: f64, center: f64, radius: f64 },

    #[error("z = {z} is a regular singular point of the local system")]
    SingularPoint { z: f64 },

    #[error("x = {x} is not a baseline for the given parameters")]
    NotABaseline { x: f64 },

    #[error("Laurent fit unstable under step halving (relative drift {drift:.3e})")]
    FitUnstable { drift: f64 },

    #[error("kernel dimension {dim} at a spectral root (expected 1)")]
    DegenerateKernel { dim: usize },

    #[error("eigenvalue {index} moved by {delta:e} between cutoffs (threshold {threshold:e})")]
    CertificationFailure {
        index: usize,
        delta: f64,
        threshold: f64,
    },

    #[error("{unmatched} eigenvalues unmatched; max matched distance {max_distance:e}")]
    MatchFailure { unmatched: usize, max_distance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
