//! Seeded random instances for property checks and the acceptance battery.
//!
//! Every generator draws entries uniformly from `[-1, 1]`; states are
//! `A A^dagger / Tr` with a rectangular `A` so the rank can be chosen.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{ChannelFamily, HamiltonianFamily};
use crate::fisher::LocalEstimator;
use crate::states::SubspaceProjector;
use crate::{c64, CMatrix, CVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(r: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

pub fn vector(r: &mut impl Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

pub fn hermitian(r: &mut impl Rng, n: usize) -> CMatrix {
    let a = matrix(r, n, n);
    (&a + a.adjoint()) * c64(0.5, 0.0)
}

/// Unit-trace density matrix of rank `rank` (almost surely).
pub fn density(r: &mut impl Rng, n: usize, rank: usize) -> CMatrix {
    let a = matrix(r, n, rank.max(1));
    let rho = &a * a.adjoint();
    let tr = rho.trace().re;
    rho * c64(1.0 / tr, 0.0)
}

/// Normalised pure state.
pub fn ket(r: &mut impl Rng, n: usize) -> CVector {
    let v = vector(r, n);
    let norm = v.norm();
    v * c64(1.0 / norm, 0.0)
}

/// `H(g) = H0 - i Gamma + g H1` with `Gamma = A A^dagger / 2 >= 0`.
pub fn effective_family(r: &mut impl Rng, d: usize) -> HamiltonianFamily {
    let h0 = hermitian(r, d);
    let a = matrix(r, d, d);
    let gamma = &a * a.adjoint() * c64(0.5, 0.0);
    let h1 = hermitian(r, d);
    HamiltonianFamily::affine(h0 - gamma * c64(0.0, 1.0), h1, false).expect("square coefficients")
}

/// Unitary evolution on `C^full` restricted to its first `m` basis states.
pub fn unitary_family(r: &mut impl Rng, full: usize, m: usize) -> ChannelFamily {
    let h = HamiltonianFamily::affine(hermitian(r, full), hermitian(r, full), true)
        .expect("square coefficients");
    let idx: Vec<usize> = (0..m).collect();
    let p = SubspaceProjector::from_indices(full, &idx).expect("m <= full");
    ChannelFamily::unitary(h, p).expect("consistent dims")
}

/// Random Hermitian accessible part and random real blank value.
pub fn local_estimator(r: &mut impl Rng, dim_m: usize) -> LocalEstimator {
    let a = hermitian(r, dim_m);
    let b = r.random_range(-2.0..2.0);
    LocalEstimator::new(a, b).expect("Hermitian by construction")
}
