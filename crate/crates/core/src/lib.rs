//! Analytic spectrum of the spin-3/2 (three-qubit) Dicke model.
//!
//! The regular spectrum of each parity chain is the zero set of a G-function,
//! the determinant of a 6×6 connection matrix built from local Frobenius
//! solutions of the Bargmann-space eigenvalue equation. Exceptional
//! eigenvalues sit on two families of baselines where the G-function has
//! poles unless they are lifted. Everything is cross-checked against dense
//! diagonalization of truncated-Fock Hamiltonians.
//!
//! ```
//! use dicke3::{gfunction, model::{ModelParams, Parity}, series::SeriesOptions};
//!
//! let params = ModelParams::new(0.25, 0.7).unwrap();
//! let z0 = 2.0 * params.g();
//! let g = gfunction::g_value(&params, Parity::Plus, 0.3, z0, &SeriesOptions::default()).unwrap();
//! assert!(g.g_norm.is_finite());
//! ```

pub mod cli;
pub mod degeneracy;
pub mod error;
pub mod gfunction;
pub mod model;
pub mod oracle;
pub mod rabi;
pub mod roots;
pub mod series;
pub mod spectrum;

pub use error::{Error, Result};
pub use model::{Baseline, BaselineKind, ModelParams, Parity};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/series.md")]
    mod series {}
    #[doc = include_str!("../../../book/src/gfunction.md")]
    mod gfunction {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/degeneracy.md")]
    mod degeneracy {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/rabi.md")]
    mod rabi {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
