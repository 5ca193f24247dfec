//! Quantum Fisher information for experimenters who can only observe a
//! subspace `M` of the full Hilbert space.
//!
//! The crate is organised bottom-up:
//!
//! - [`operator`]: dense complex linear algebra, including the symmetric
//!   logarithmic derivative (SLD) solver everything else builds on.
//! - [`states`]: density operators, subspace projection, the blank-state
//!   extension and the block-structured composite local state.
//! - [`dynamics`]: non-Hermitian and unitary evolution, channels
//!   `X -> P U X U^dagger P`, Lindblad generators and tensor-power application.
//! - [`fisher`]: single-system information functionals and estimators.
//! - [`composite`]: the two composite-system informations `j^(N)` and `J^(N)`,
//!   with descendant blocks computed directly or by inclusion-exclusion over
//!   channel-evolved partial traces.
//! - [`montecarlo`]: simulated projective measurements.
//! - [`scenarios`]: the decaying two-level model and its closed forms.
//! - [`io`]: JSON formats for matrices, composite states, models and scenarios.
//! - [`validation`]: the acceptance battery shared by the test suite and the CLI.
//!
//! Units: `hbar = 1`, so times and decay rates are reciprocal.

#![forbid(unsafe_code)]

pub mod composite;
pub mod dynamics;
pub mod error;
pub mod fisher;
pub mod io;
pub mod montecarlo;
pub mod operator;
mod par;
pub mod random;
pub mod scenarios;
pub mod states;
pub mod validation;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;

/// Dense complex matrix used throughout the crate.
pub type CMatrix = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVector = DVector<Complex64>;

/// Shorthand for a complex literal.
#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}
