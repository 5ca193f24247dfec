//! Single-system information functionals and estimators.
//!
//! A local estimator is `A~ = A_par (+) a_perp |B><B|`: any Hermitian operator on
//! `M` plus one real value reported when the system is found outside `M`.
//! For a subnormalised accessible state `rho_par` with SLD `L`, the local Fisher
//! information is
//!
//! ```text
//! J = Tr[L^2 rho_par] + (Tr[L rho_par])^2 / (1 - Tr rho_par)
//! ```
//!
//! and the second (blank) term is the information carried by the
//! probability of having left `M`.

use serde::Serialize;

use crate::dynamics::richardson_derivative;
use crate::operator::{
    embed_site, ensure_hermitian, ensure_same_shape, identity, max_abs, solve_sld, trace_re,
};
use crate::states::{BlankExtendedState, ESCAPE_TOL, TRACE_TOL};
use crate::{c64, CMatrix, CVector, Error, Result};

/// Below this blank weight the blank term is evaluated by the guarded rule.
pub const EPS_BLANK: f64 = 1e-9;
/// Estimators whose mean moves slower than this with `g` are insensitive.
pub const EPS_SENSITIVITY: f64 = 1e-12;
/// Allowed `|Tr d rho|` for a normalised family.
pub const TRACE_DERIVATIVE_TOL: f64 = 1e-8;
/// Largest Hilbert-space dimension [`nsample_sld`] will build.
pub const MAX_DENSE_DIM: usize = 4096;

/// `A~ = A_par (+) a_perp |B><B|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalEstimator {
    #[serde(with = "crate::io::matrix_serde")]
    accessible: CMatrix,
    blank_value: f64,
}

impl LocalEstimator {
    pub fn new(accessible: CMatrix, blank_value: f64) -> Result<Self> {
        ensure_hermitian(&accessible)?;
        if !blank_value.is_finite() {
            return Err(Error::NonFinite("estimator blank value".into()));
        }
        Ok(Self {
            accessible: crate::operator::hermitian_part(&accessible),
            blank_value,
        })
    }

    /// The identity of the extended space.
    pub fn identity(dim_m: usize) -> Self {
        Self {
            accessible: identity(dim_m),
            blank_value: 1.0,
        }
    }

    /// `|B><B|`, the indicator of having left `M`.
    pub fn blank_projector(dim_m: usize) -> Self {
        Self {
            accessible: CMatrix::zeros(dim_m, dim_m),
            blank_value: 1.0,
        }
    }

    /// Reads a dense `(dim_m + 1)`-dimensional operator (blank index last).
    /// Couplings between `M` and `|B>` are not measurable locally and are rejected.
    pub fn from_dense(a: &CMatrix) -> Result<Self> {
        ensure_hermitian(a)?;
        let m = a.nrows().checked_sub(1).ok_or_else(|| {
            Error::DimensionMismatch("extended operator needs dimension >= 1".into())
        })?;
        let coupling = a.view((0, m), (m, 1)).iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
        if coupling > 1e-12 * max_abs(a).max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "local estimators cannot couple M to the blank state (|coupling| = {coupling:e})"
            )));
        }
        Self::new(a.view((0, 0), (m, m)).into_owned(), a[(m, m)].re)
    }

    pub fn accessible(&self) -> &CMatrix {
        &self.accessible
    }

    pub fn blank_value(&self) -> f64 {
        self.blank_value
    }

    pub fn dim_m(&self) -> usize {
        self.accessible.nrows()
    }

    /// Dense operator on `M (+) C|B>`, blank index last.
    pub fn to_dense(&self) -> CMatrix {
        BlankExtendedState {
            accessible: self.accessible.clone(),
            blank_weight: self.blank_value,
        }
        .to_dense()
    }

    /// `a A~ + b 1`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            accessible: &self.accessible * c64(a, 0.0) + identity(self.dim_m()) * c64(b, 0.0),
            blank_value: a * self.blank_value + b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherFlag {
    /// `1 - Tr rho_par` was below the guard and the blank term was set to zero.
    BlankTermDropped,
    /// `1 - Tr rho_par < EPS_BLANK`.
    NearUnitTrace,
    /// The derivative had kernel-to-kernel components no SLD can reproduce.
    KernelLeak,
}

/// Value of an information functional and the estimator that attains its bound.
#[derive(Debug, Clone, Serialize)]
pub struct FisherReport {
    pub value: f64,
    /// `Tr[L^2 rho_par]`.
    pub accessible_term: f64,
    /// `(Tr[L rho_par])^2 / (1 - Tr rho_par)`.
    pub blank_term: f64,
    /// `Tr rho_par`.
    pub trace: f64,
    #[serde(with = "crate::io::matrix_serde")]
    pub sld: CMatrix,
    /// `L - (Tr[L rho_par] / (1 - Tr rho_par)) |B><B|`, not yet calibrated.
    pub optimal_estimator: LocalEstimator,
    pub support_rank: usize,
    pub kernel_leak: f64,
    pub flags: Vec<FisherFlag>,
}

impl FisherReport {
    /// The optimal estimator variant with no blank matrix element:
    /// `L + (Tr[L rho_par] / (1 - Tr rho_par)) 1_M`. It differs from
    /// [`FisherReport::optimal_estimator`] by a multiple of the identity.
    pub fn alternative_optimal_estimator(&self) -> LocalEstimator {
        let shift = self.optimal_estimator.blank_value();
        self.optimal_estimator.affine(1.0, -shift)
    }

    pub fn has_flag(&self, flag: FisherFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Fisher information of a unit-trace family.
pub fn fisher_info(rho: &CMatrix, drho: &CMatrix) -> Result<FisherReport> {
    ensure_hermitian(rho)?;
    let tr = trace_re(rho);
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(Error::InvalidTrace {
            trace: tr,
            reason: "fisher_info needs a unit-trace state; use local_fisher",
        });
    }
    ensure_hermitian(drho)?;
    let dtr = trace_re(drho);
    if dtr.abs() > TRACE_DERIVATIVE_TOL {
        return Err(Error::TraceDerivativeNonZero(dtr));
    }
    local_fisher(rho, drho)
}

/// Local Fisher information of a subnormalised accessible state.
pub fn local_fisher(rho_par: &CMatrix, drho_par: &CMatrix) -> Result<FisherReport> {
    ensure_same_shape(rho_par, drho_par, "local_fisher")?;
    ensure_hermitian(rho_par)?;
    let tr = trace_re(rho_par);
    if tr < ESCAPE_TOL {
        return Err(Error::OutsideTimeDomain(tr));
    }
    if tr > 1.0 + TRACE_TOL {
        return Err(Error::InvalidTrace {
            trace: tr,
            reason: "accessible trace exceeds one",
        });
    }
    let sld = solve_sld(rho_par, drho_par)?;
    let l = &sld.matrix;
    let lrho = l * rho_par;
    let accessible_term = trace_re(&(l * &lrho)).max(0.0);
    let c = trace_re(&lrho);
    let blank = (1.0 - tr).max(0.0);
    let mut flags = Vec::new();
    let scale = rho_par.iter().fold(0.0_f64, |a, z| a.max(z.norm())).max(max_abs(drho_par));
    if sld.kernel_leak > 1e-9 * scale {
        flags.push(FisherFlag::KernelLeak);
    }
    let (blank_term, blank_value) = if blank < EPS_BLANK {
        flags.push(FisherFlag::NearUnitTrace);
        if c.abs() < EPS_BLANK.sqrt() {
            flags.push(FisherFlag::BlankTermDropped);
            (0.0, 0.0)
        } else {
            return Err(Error::InconsistentBlankTerm {
                numerator: c,
                blank_weight: blank,
            });
        }
    } else {
        (c * c / blank, -c / blank)
    };
    Ok(FisherReport {
        value: accessible_term + blank_term,
        accessible_term,
        blank_term,
        trace: tr,
        optimal_estimator: LocalEstimator {
            accessible: l.clone(),
            blank_value,
        },
        sld: sld.matrix,
        support_rank: sld.support_rank,
        kernel_leak: sld.kernel_leak,
        flags,
    })
}

/// Terms of the pure-state formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PureStateFisher {
    pub value: f64,
    /// `4 (<dpsi|dpsi> - (Im <psi|dpsi>)^2 / <psi|psi>)`.
    pub accessible_term: f64,
    /// `4 (Re <psi|dpsi>)^2 / (1 - <psi|psi>)`.
    pub blank_term: f64,
    pub norm_squared: f64,
}

/// Fisher information of the unnormalised pure family `|psi(g)>`, `<psi|psi> <= 1`.
pub fn pure_state_fisher(psi: &CVector, dpsi: &CVector) -> Result<f64> {
    Ok(pure_state_fisher_terms(psi, dpsi)?.value)
}

pub fn pure_state_fisher_terms(psi: &CVector, dpsi: &CVector) -> Result<PureStateFisher> {
    if psi.len() != dpsi.len() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} vs derivative of length {}",
            psi.len(),
            dpsi.len()
        )));
    }
    let n = psi.norm_squared();
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if n > 1.0 + TRACE_TOL {
        return Err(Error::InvalidTrace {
            trace: n,
            reason: "pure state norm exceeds one",
        });
    }
    let z = psi.dotc(dpsi);
    let accessible_term = 4.0 * (dpsi.norm_squared() - z.im * z.im / n);
    let blank = (1.0 - n).max(0.0);
    let blank_term = if blank < EPS_BLANK {
        // d<psi|psi>/dg = 2 Re z plays the role of Tr[L rho]
        if (2.0 * z.re).abs() < EPS_BLANK.sqrt() {
            0.0
        } else {
            return Err(Error::InconsistentBlankTerm {
                numerator: 2.0 * z.re,
                blank_weight: blank,
            });
        }
    } else {
        4.0 * z.re * z.re / blank
    };
    Ok(PureStateFisher {
        value: accessible_term.max(0.0) + blank_term,
        accessible_term: accessible_term.max(0.0),
        blank_term,
        norm_squared: n,
    })
}

/// A one-parameter family of accessible operators on `M`.
pub trait LocalFamily {
    fn dim_m(&self) -> usize;

    /// `rho_par(g)`.
    fn accessible(&self, g: f64) -> Result<CMatrix>;

    /// `rho_par(g)` and `d rho_par / dg`; defaults to Richardson-extrapolated
    /// central differences.
    fn accessible_with_derivative(&self, g: f64) -> Result<(CMatrix, CMatrix)> {
        let rho = self.accessible(g)?;
        let d = richardson_derivative(|x| self.accessible(x), g)?;
        Ok((rho, crate::operator::hermitian_part(&d)))
    }
}

/// Family given by a closure; derivatives by finite differences.
pub struct ClosureFamily<F> {
    dim_m: usize,
    f: F,
}

impl<F: Fn(f64) -> Result<CMatrix>> ClosureFamily<F> {
    pub fn new(dim_m: usize, f: F) -> Self {
        Self { dim_m, f }
    }
}

impl<F: Fn(f64) -> Result<CMatrix>> LocalFamily for ClosureFamily<F> {
    fn dim_m(&self) -> usize {
        self.dim_m
    }

    fn accessible(&self, g: f64) -> Result<CMatrix> {
        (self.f)(g)
    }
}

/// `rho_par(g) = base + (g - g_ref) slope`, with exact derivative.
#[derive(Debug, Clone)]
pub struct LinearFamily {
    pub base: CMatrix,
    pub slope: CMatrix,
    pub g_ref: f64,
}

impl LinearFamily {
    pub fn new(base: CMatrix, slope: CMatrix, g_ref: f64) -> Result<Self> {
        ensure_hermitian(&base)?;
        ensure_hermitian(&slope)?;
        ensure_same_shape(&base, &slope, "linear family")?;
        Ok(Self { base, slope, g_ref })
    }
}

impl LocalFamily for LinearFamily {
    fn dim_m(&self) -> usize {
        self.base.nrows()
    }

    fn accessible(&self, g: f64) -> Result<CMatrix> {
        Ok(&self.base + &self.slope * c64(g - self.g_ref, 0.0))
    }

    fn accessible_with_derivative(&self, g: f64) -> Result<(CMatrix, CMatrix)> {
        Ok((self.accessible(g)?, self.slope.clone()))
    }
}

/// Fisher report for a family at `g`.
pub fn family_fisher(family: &dyn LocalFamily, g: f64) -> Result<FisherReport> {
    let (rho, drho) = family.accessible_with_derivative(g)?;
    local_fisher(&rho, &drho)
}

/// Expected error `sqrt(V) / |dE/dg|` and the quantities it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedError {
    pub delta_g: f64,
    pub mean: f64,
    pub variance: f64,
    /// `dE/dg`.
    pub slope: f64,
}

impl ExpectedError {
    pub fn delta_g_squared(&self) -> f64 {
        self.delta_g * self.delta_g
    }
}

fn extended(rho_par: &CMatrix) -> BlankExtendedState {
    BlankExtendedState {
        accessible: rho_par.clone(),
        blank_weight: (1.0 - trace_re(rho_par)).max(0.0),
    }
}

/// `(E[A~], V[A~], dE/dg)` for an accessible state and its derivative.
pub fn estimator_moments(
    rho_par: &CMatrix,
    drho_par: &CMatrix,
    est: &LocalEstimator,
) -> Result<(f64, f64, f64)> {
    ensure_same_shape(rho_par, drho_par, "estimator_moments")?;
    let state = extended(rho_par);
    let mean = state.expectation(est)?;
    let variance = state.variance(est)?;
    let slope = trace_re(&(drho_par * est.accessible())) - est.blank_value() * trace_re(drho_par);
    Ok((mean, variance, slope))
}

pub fn expected_error(family: &dyn LocalFamily, est: &LocalEstimator, g: f64) -> Result<ExpectedError> {
    let (rho, drho) = family.accessible_with_derivative(g)?;
    expected_error_at(&rho, &drho, est)
}

/// [`expected_error`] for an already evaluated state and derivative.
pub fn expected_error_at(rho_par: &CMatrix, drho_par: &CMatrix, est: &LocalEstimator) -> Result<ExpectedError> {
    let (mean, variance, slope) = estimator_moments(rho_par, drho_par, est)?;
    if slope.abs() < EPS_SENSITIVITY {
        return Err(Error::InsensitiveEstimator(slope));
    }
    Ok(ExpectedError {
        delta_g: variance.sqrt() / slope.abs(),
        mean,
        variance,
        slope,
    })
}

/// Affine map `f(x) = (x - E_{g0}) / (dE/dg)|_{g0} + g0` that makes an estimator
/// locally unbiased at `g0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearCalibration {
    pub g0: f64,
    pub mean: f64,
    pub slope: f64,
}

impl LinearCalibration {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.slope + self.g0
    }

    /// The calibrated estimator `f(A~)` as a local estimator.
    pub fn calibrated(&self, est: &LocalEstimator) -> LocalEstimator {
        est.affine(1.0 / self.slope, self.g0 - self.mean / self.slope)
    }
}

pub fn calibrate_linear(family: &dyn LocalFamily, est: &LocalEstimator, g0: f64) -> Result<LinearCalibration> {
    let e = expected_error(family, est, g0)?;
    Ok(LinearCalibration {
        g0,
        mean: e.mean,
        slope: e.slope,
    })
}

/// `L^(N) = sum_k 1 (x) ... (x) L (x) ... (x) 1`.
pub fn nsample_sld(l: &CMatrix, n: usize) -> Result<CMatrix> {
    ensure_hermitian(l)?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let d = l.nrows();
    let total = (d as u128).pow(n as u32);
    if total > MAX_DENSE_DIM as u128 {
        return Err(Error::TooLarge {
            what: "N-sample dimension",
            value: total.min(usize::MAX as u128) as usize,
            max: MAX_DENSE_DIM,
        });
    }
    let total = total as usize;
    let mut out = CMatrix::zeros(total, total);
    for site in 0..n {
        out += embed_site(l, site, n, d);
    }
    Ok(out)
}
