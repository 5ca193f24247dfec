//! Time evolution on the accessible subspace.
//!
//! Superoperators act on column-stacked matrices: `vec(X)[i + j*d] = X[i, j]`,
//! so `vec(A X B) = (B^T (x) A) vec(X)` and a Kraus operator `K` contributes
//! `conj(K) (x) K`. This matches `nalgebra`'s column-major storage, so
//! vectorising is a plain reinterpretation of the data.
//!
//! Every channel built here carries its analytic `g`-derivative, obtained from
//! Frechet derivatives of the matrix exponential. Central differences with
//! Richardson extrapolation are available as a cross-check and as the
//! fallback for user-supplied families.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fisher::LocalFamily;
use crate::operator::{
    ensure_hermitian, ensure_same_shape, ensure_square, exp_with_frechet, hermitian_eig,
    hermitian_part, identity, matrix_exp, max_abs, positive_sqrt, trace_re,
    POSITIVITY_TOL,
};
use crate::states::{DensityOperator, SubspaceProjector, ESCAPE_TOL};
use crate::{c64, CMatrix, CVector, Error, Result};

/// Relative trace growth tolerated before an effective evolution counts as
/// non-dissipative.
pub const TRACE_GROWTH_TOL: f64 = 1e-6;
/// Relative Choi-eigenvalue tolerance for complete positivity.
pub const CP_TOL: f64 = 1e-10;

const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

pub(crate) fn vec_of(x: &CMatrix) -> DVector<Complex64> {
    DVector::from_column_slice(x.as_slice())
}

pub(crate) fn unvec(v: &DVector<Complex64>, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

fn ensure_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Hamiltonian polynomial in the parameter: `H(g) = sum_k g^k C_k`.
#[derive(Debug, Clone)]
pub struct HamiltonianFamily {
    coefficients: Vec<CMatrix>,
    hermitian: bool,
}

impl HamiltonianFamily {
    /// `hermitian = false` marks an effective (dissipative) Hamiltonian.
    pub fn new(coefficients: Vec<CMatrix>, hermitian: bool) -> Result<Self> {
        let first = coefficients
            .first()
            .ok_or_else(|| Error::InvalidArgument("Hamiltonian needs at least one coefficient".into()))?;
        let d = ensure_square(first)?;
        for c in &coefficients {
            if c.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!(
                    "Hamiltonian coefficients of shapes {:?} and {:?}",
                    first.shape(),
                    c.shape()
                )));
            }
            if hermitian {
                ensure_hermitian(c)?;
            }
        }
        Ok(Self {
            coefficients,
            hermitian,
        })
    }

    /// `H(g) = h0 + g h1`.
    pub fn affine(h0: CMatrix, h1: CMatrix, hermitian: bool) -> Result<Self> {
        Self::new(vec![h0, h1], hermitian)
    }

    pub fn dim(&self) -> usize {
        self.coefficients[0].nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn coefficients(&self) -> &[CMatrix] {
        &self.coefficients
    }

    pub fn at(&self, g: f64) -> CMatrix {
        // Horner
        let mut acc = CMatrix::zeros(self.dim(), self.dim());
        for c in self.coefficients.iter().rev() {
            acc = acc * c64(g, 0.0) + c;
        }
        acc
    }

    /// `dH/dg`.
    pub fn derivative(&self, g: f64) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim(), self.dim());
        for (k, c) in self.coefficients.iter().enumerate().skip(1).rev() {
            acc = acc * c64(g, 0.0) + c * c64(k as f64, 0.0);
        }
        acc
    }

    /// Largest eigenvalue of the Hermitian part of `-iH(g)`; non-positive for
    /// dissipative families.
    pub fn dissipation_margin(&self, g: f64) -> Result<f64> {
        let a = self.at(g) * MINUS_I;
        Ok(hermitian_eig(&hermitian_part(&a))?.max_value())
    }

    /// `exp(-i H(g) t)`.
    pub fn propagator(&self, g: f64, t: f64) -> Result<CMatrix> {
        ensure_time(t)?;
        matrix_exp(&(self.at(g) * c64(0.0, -t)))
    }

    /// `exp(-i H(g) t)` and its `g`-derivative.
    pub fn propagator_with_derivative(&self, g: f64, t: f64) -> Result<(CMatrix, CMatrix)> {
        ensure_time(t)?;
        let a = self.at(g) * c64(0.0, -t);
        let e = self.derivative(g) * c64(0.0, -t);
        exp_with_frechet(&a, &e)
    }
}

/// `rho(t) = e^{-iHt} rho0 e^{iH^dagger t}` on the space of `H`.
pub fn evolve_nonhermitian(
    h: &HamiltonianFamily,
    rho0: &DensityOperator,
    g: f64,
    t: f64,
) -> Result<DensityOperator> {
    if rho0.dim() != h.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state of dim {} vs Hamiltonian of dim {}",
            rho0.dim(),
            h.dim()
        )));
    }
    let k = h.propagator(g, t)?;
    let rho = hermitian_part(&(&k * rho0.matrix() * k.adjoint()));
    let tr = trace_re(&rho);
    if tr > rho0.trace() * (1.0 + TRACE_GROWTH_TOL) {
        return Err(Error::NonDissipative(tr));
    }
    if tr < ESCAPE_TOL {
        return Err(Error::OutsideTimeDomain(tr));
    }
    let rho = if tr > 1.0 { rho * c64(1.0 / tr, 0.0) } else { rho };
    DensityOperator::subnormalized(rho)
}

/// `e^{-iHt} psi` and its `g`-derivative.
pub fn evolve_vector_with_derivative(
    h: &HamiltonianFamily,
    psi0: &CVector,
    g: f64,
    t: f64,
) -> Result<(CVector, CVector)> {
    if psi0.len() != h.dim() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} vs Hamiltonian of dim {}",
            psi0.len(),
            h.dim()
        )));
    }
    let (k, dk) = h.propagator_with_derivative(g, t)?;
    Ok((&k * psi0, &dk * psi0))
}

/// Linear map on `dim x dim` matrices given by its superoperator matrix,
/// optionally with the `g`-derivative of that matrix.
#[derive(Debug, Clone)]
pub struct QuantumChannel {
    dim: usize,
    superop: CMatrix,
    dsuperop: Option<CMatrix>,
}

fn kraus_superop(k: &CMatrix) -> CMatrix {
    k.conjugate().kronecker(k)
}

impl QuantumChannel {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            superop: identity(dim * dim),
            dsuperop: Some(CMatrix::zeros(dim * dim, dim * dim)),
        }
    }

    /// `X -> sum_k K_k X K_k^dagger` (completely positive by construction).
    pub fn from_kraus(kraus: &[CMatrix]) -> Result<Self> {
        Self::build_kraus(kraus, None)
    }

    /// Kraus channel with derivatives `dK_k/dg`.
    pub fn from_kraus_with_derivative(kraus: &[CMatrix], dkraus: &[CMatrix]) -> Result<Self> {
        if kraus.len() != dkraus.len() {
            return Err(Error::DimensionMismatch(
                "Kraus operators and derivatives differ in number".into(),
            ));
        }
        Self::build_kraus(kraus, Some(dkraus))
    }

    fn build_kraus(kraus: &[CMatrix], dkraus: Option<&[CMatrix]>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidArgument("channel needs a Kraus operator".into()))?;
        let d = ensure_square(first)?;
        let mut superop = CMatrix::zeros(d * d, d * d);
        let mut dsuperop = dkraus.map(|_| CMatrix::zeros(d * d, d * d));
        for (i, k) in kraus.iter().enumerate() {
            ensure_same_shape(first, k, "Kraus operators")?;
            superop += kraus_superop(k);
            if let (Some(ds), Some(dks)) = (dsuperop.as_mut(), dkraus) {
                let dk = &dks[i];
                ensure_same_shape(k, dk, "Kraus derivative")?;
                *ds += dk.conjugate().kronecker(k) + k.conjugate().kronecker(dk);
            }
        }
        Ok(Self {
            dim: d,
            superop,
            dsuperop,
        })
    }

    /// Channel from a superoperator matrix; complete positivity is verified on
    /// the Choi matrix.
    pub fn from_superoperator(dim: usize, superop: CMatrix, dsuperop: Option<CMatrix>) -> Result<Self> {
        let n = dim * dim;
        if superop.shape() != (n, n) || dsuperop.as_ref().is_some_and(|d| d.shape() != (n, n)) {
            return Err(Error::DimensionMismatch(format!(
                "superoperator for dim {dim} must be {n}x{n}"
            )));
        }
        let ch = Self {
            dim,
            superop,
            dsuperop,
        };
        let min = ch.choi_min_eigenvalue()?;
        let scale = max_abs(&ch.superop).max(1.0);
        if min < -CP_TOL * scale {
            return Err(Error::NotCompletelyPositive(min));
        }
        Ok(ch)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn superoperator(&self) -> &CMatrix {
        &self.superop
    }

    pub fn derivative(&self) -> Option<&CMatrix> {
        self.dsuperop.as_ref()
    }

    fn check_input(&self, x: &CMatrix) -> Result<()> {
        if x.shape() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch(format!(
                "channel on dim {} applied to {:?}",
                self.dim,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix> {
        self.check_input(x)?;
        Ok(unvec(&(&self.superop * vec_of(x)), self.dim))
    }

    /// Propagates a value and its derivative: `(S X, S dX + dS X)`.
    pub fn apply_with_derivative(&self, x: &CMatrix, dx: &CMatrix) -> Result<(CMatrix, CMatrix)> {
        self.check_input(x)?;
        self.check_input(dx)?;
        let ds = self.dsuperop.as_ref().ok_or_else(|| {
            Error::InvalidArgument("channel was built without a parameter derivative".into())
        })?;
        let vx = vec_of(x);
        let y = &self.superop * &vx;
        let dy = &self.superop * vec_of(dx) + ds * vx;
        Ok((unvec(&y, self.dim), unvec(&dy, self.dim)))
    }

    /// Choi matrix `sum_ij E_ij (x) Gamma(E_ij)`.
    pub fn choi(&self) -> CMatrix {
        let d = self.dim;
        let mut c = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                // Gamma(E_ij) is column i + j*d of the superoperator
                let col = self.superop.column(i + j * d);
                for a in 0..d {
                    for b in 0..d {
                        c[(i * d + a, j * d + b)] = col[a + b * d];
                    }
                }
            }
        }
        c
    }

    pub fn choi_min_eigenvalue(&self) -> Result<f64> {
        let c = hermitian_part(&self.choi());
        Ok(hermitian_eig(&c)?.min_value())
    }

    /// `self o first` (apply `first`, then `self`).
    pub fn compose(&self, first: &QuantumChannel) -> Result<QuantumChannel> {
        if self.dim != first.dim {
            return Err(Error::DimensionMismatch("composing channels of different dims".into()));
        }
        let superop = &self.superop * &first.superop;
        let dsuperop = match (&self.dsuperop, &first.dsuperop) {
            (Some(a), Some(b)) => Some(a * &first.superop + &self.superop * b),
            _ => None,
        };
        Ok(QuantumChannel {
            dim: self.dim,
            superop,
            dsuperop,
        })
    }
}

/// Generator `T_g` of a semigroup of channels, `Gamma(t) = exp(t T_g)`.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    dim: usize,
    superop: CMatrix,
    dsuperop: Option<CMatrix>,
}

impl LindbladGenerator {
    /// `T[X] = -i H X + i X H^dagger` for an effective Hamiltonian on `M`.
    pub fn from_effective_hamiltonian(h: &CMatrix, dh: Option<&CMatrix>) -> Result<Self> {
        let d = ensure_square(h)?;
        let gen = |h: &CMatrix| -> CMatrix {
            identity(d).kronecker(h) * MINUS_I + h.conjugate().kronecker(&identity(d)) * c64(0.0, 1.0)
        };
        let dsuperop = match dh {
            Some(dh) => {
                ensure_same_shape(h, dh, "Hamiltonian derivative")?;
                Some(gen(dh))
            }
            None => None,
        };
        Ok(Self {
            dim: d,
            superop: gen(h),
            dsuperop,
        })
    }

    /// `T[X] = -i[H, X] + sum_k (L_k X L_k^dagger - {L_k^dagger L_k, X}/2)` with
    /// parameter-independent jump operators.
    pub fn from_lindblad(h: &CMatrix, dh: Option<&CMatrix>, jumps: &[CMatrix]) -> Result<Self> {
        ensure_hermitian(h)?;
        let d = h.nrows();
        let mut base = Self::from_effective_hamiltonian(h, dh)?;
        let eye = identity(d);
        let half = c64(0.5, 0.0);
        for l in jumps {
            ensure_same_shape(h, l, "jump operator")?;
            let ldl = l.adjoint() * l;
            base.superop += kraus_superop(l)
                - eye.kronecker(&ldl) * half
                - ldl.transpose().kronecker(&eye) * half;
        }
        Ok(base)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn superoperator(&self) -> &CMatrix {
        &self.superop
    }

    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix> {
        if x.shape() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch("generator input shape".into()));
        }
        Ok(unvec(&(&self.superop * vec_of(x)), self.dim))
    }

    /// `exp(t T_g)`, with its `g`-derivative when the generator has one.
    pub fn channel(&self, t: f64) -> Result<QuantumChannel> {
        ensure_time(t)?;
        let tt = &self.superop * c64(t, 0.0);
        let (superop, dsuperop) = match &self.dsuperop {
            Some(dt) => {
                let (s, ds) = exp_with_frechet(&tt, &(dt * c64(t, 0.0)))?;
                (s, Some(ds))
            }
            None => (matrix_exp(&tt)?, None),
        };
        QuantumChannel::from_superoperator(self.dim, superop, dsuperop)
    }
}

/// `X -> P U X U^dagger P` restricted to `M`, for a Hermitian full-space family.
pub fn channel_from_unitary(
    h_full: &HamiltonianFamily,
    p: &SubspaceProjector,
    g: f64,
    t: f64,
) -> Result<QuantumChannel> {
    ChannelFamily::unitary(h_full.clone(), p.clone())?.channel(g, t)
}

/// `X -> K X K^dagger` with `K = exp(-i H_eff t)` on `M`.
pub fn channel_from_effective(h_eff: &HamiltonianFamily, g: f64, t: f64) -> Result<QuantumChannel> {
    let (k, dk) = h_eff.propagator_with_derivative(g, t)?;
    QuantumChannel::from_kraus_with_derivative(&[k], &[dk])
}

pub fn channel_from_lindblad(generator: &LindbladGenerator, t: f64) -> Result<QuantumChannel> {
    generator.channel(t)
}

/// Applies the superoperator `s` (dim `d`) to tensor factor `site` of `x`, an
/// operator on `d^k`.
fn apply_on_site(s: &CMatrix, d: usize, x: &CMatrix, site: usize, k: usize) -> CMatrix {
    let right = d.pow((k - site - 1) as u32);
    let left = d.pow(site as u32);
    let idx = |l: usize, a: usize, r: usize| (l * d + a) * right + r;
    let mut out = CMatrix::zeros(x.nrows(), x.ncols());
    let zero = Complex64::new(0.0, 0.0);
    for l in 0..left {
        for r in 0..right {
            for lp in 0..left {
                for rp in 0..right {
                    // gather the d x d slot, apply s, scatter back
                    for a in 0..d {
                        for b in 0..d {
                            let row = a + b * d;
                            let mut acc = zero;
                            for ap in 0..d {
                                for bp in 0..d {
                                    let coef = s[(row, ap + bp * d)];
                                    if coef != zero {
                                        acc += coef * x[(idx(l, ap, r), idx(lp, bp, rp))];
                                    }
                                }
                            }
                            out[(idx(l, a, r), idx(lp, b, rp))] = acc;
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_tensor_input(ch: &QuantumChannel, k: usize, x: &CMatrix) -> Result<()> {
    let n = ch.dim.checked_pow(k as u32).unwrap_or(usize::MAX);
    if k == 0 || x.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "Gamma^(x){k} on dim {} needs a {n}x{n} input, got {:?}",
            ch.dim,
            x.shape()
        )));
    }
    Ok(())
}

/// `Gamma^(x)k [X]` for `X` on `M^(x)k`.
pub fn channel_tensor_apply(ch: &QuantumChannel, k: usize, x: &CMatrix) -> Result<CMatrix> {
    check_tensor_input(ch, k, x)?;
    let mut y = x.clone();
    for site in 0..k {
        y = apply_on_site(&ch.superop, ch.dim, &y, site, k);
    }
    Ok(y)
}

/// `Gamma^(x)k [X]` together with its `g`-derivative, given `dX/dg`.
pub fn channel_tensor_apply_with_derivative(
    ch: &QuantumChannel,
    k: usize,
    x: &CMatrix,
    dx: &CMatrix,
) -> Result<(CMatrix, CMatrix)> {
    check_tensor_input(ch, k, x)?;
    check_tensor_input(ch, k, dx)?;
    let ds = ch.dsuperop.as_ref().ok_or_else(|| {
        Error::InvalidArgument("channel was built without a parameter derivative".into())
    })?;
    let (mut y, mut dy) = (x.clone(), dx.clone());
    for site in 0..k {
        let ny = apply_on_site(&ch.superop, ch.dim, &y, site, k);
        dy = apply_on_site(&ch.superop, ch.dim, &dy, site, k) + apply_on_site(ds, ch.dim, &y, site, k);
        y = ny;
    }
    Ok((y, dy))
}

/// Restriction of a full-space evolution to states that start in `M`:
/// `rho_tot(t) = V rho(0) V^dagger` with an isometry `V: M -> H`.
#[derive(Debug, Clone)]
pub struct FullSpaceModel {
    pub isometry: CMatrix,
    pub subspace: SubspaceProjector,
}

/// Parametrised family of channels on `M`.
#[derive(Debug, Clone)]
pub enum ChannelFamily {
    /// Non-Hermitian effective Hamiltonian acting directly on `M`.
    Effective(HamiltonianFamily),
    /// Hermitian Hamiltonian on the full space, observed through `subspace`.
    Unitary {
        hamiltonian: HamiltonianFamily,
        subspace: SubspaceProjector,
    },
    /// Lindblad generator with Hermitian `H(g)` and fixed jump operators.
    Lindblad {
        hamiltonian: HamiltonianFamily,
        jumps: Vec<CMatrix>,
    },
}

impl ChannelFamily {
    pub fn effective(h: HamiltonianFamily) -> Self {
        ChannelFamily::Effective(h)
    }

    pub fn unitary(hamiltonian: HamiltonianFamily, subspace: SubspaceProjector) -> Result<Self> {
        if !hamiltonian.is_hermitian() {
            return Err(Error::NotHermitian(f64::NAN));
        }
        if hamiltonian.dim() != subspace.full_dim() {
            return Err(Error::DimensionMismatch(format!(
                "Hamiltonian of dim {} vs subspace inside dim {}",
                hamiltonian.dim(),
                subspace.full_dim()
            )));
        }
        Ok(ChannelFamily::Unitary {
            hamiltonian,
            subspace,
        })
    }

    pub fn lindblad(hamiltonian: HamiltonianFamily, jumps: Vec<CMatrix>) -> Result<Self> {
        if !hamiltonian.is_hermitian() {
            return Err(Error::NotHermitian(f64::NAN));
        }
        for l in &jumps {
            if l.shape() != (hamiltonian.dim(), hamiltonian.dim()) {
                return Err(Error::DimensionMismatch("jump operator shape".into()));
            }
        }
        Ok(ChannelFamily::Lindblad { hamiltonian, jumps })
    }

    /// Dimension of the accessible subspace.
    pub fn dim_m(&self) -> usize {
        match self {
            ChannelFamily::Effective(h) | ChannelFamily::Lindblad { hamiltonian: h, .. } => h.dim(),
            ChannelFamily::Unitary { subspace, .. } => subspace.rank(),
        }
    }

    /// `Gamma(g, t)` with its analytic `g`-derivative.
    pub fn channel(&self, g: f64, t: f64) -> Result<QuantumChannel> {
        match self {
            ChannelFamily::Effective(h) => channel_from_effective(h, g, t),
            ChannelFamily::Unitary {
                hamiltonian,
                subspace,
            } => {
                let (u, du) = hamiltonian.propagator_with_derivative(g, t)?;
                let k = subspace.compress(&u);
                let dk = subspace.compress(&du);
                QuantumChannel::from_kraus_with_derivative(&[k], &[dk])
            }
            ChannelFamily::Lindblad { .. } => self.generator(g)?.channel(t),
        }
    }

    /// `T_g = d/dt Gamma(g, t)` at `t = 0`. For `Unitary` families the
    /// restricted dynamics is not a semigroup and only this initial slope is
    /// returned.
    pub fn generator(&self, g: f64) -> Result<LindbladGenerator> {
        match self {
            ChannelFamily::Effective(h) => {
                LindbladGenerator::from_effective_hamiltonian(&h.at(g), Some(&h.derivative(g)))
            }
            ChannelFamily::Unitary {
                hamiltonian,
                subspace,
            } => {
                let hm = subspace.compress(&hamiltonian.at(g));
                let dhm = subspace.compress(&hamiltonian.derivative(g));
                LindbladGenerator::from_effective_hamiltonian(&hm, Some(&dhm))
            }
            ChannelFamily::Lindblad { hamiltonian, jumps } => LindbladGenerator::from_lindblad(
                &hamiltonian.at(g),
                Some(&hamiltonian.derivative(g)),
                jumps,
            ),
        }
    }

    /// Full-space description of the evolution. Effective models are dilated
    /// to `M (+) M'` with `V = [K; sqrt(1 - K^dagger K)]`; Lindblad families
    /// have no such model here.
    pub fn full_space(&self, g: f64, t: f64) -> Result<FullSpaceModel> {
        match self {
            ChannelFamily::Effective(h) => {
                let k = h.propagator(g, t)?;
                let m = k.nrows();
                let defect = identity(m) - k.adjoint() * &k;
                let min = hermitian_eig(&hermitian_part(&defect))?.min_value();
                if min < -POSITIVITY_TOL {
                    return Err(Error::NonDissipative(-min));
                }
                let root = positive_sqrt(&hermitian_part(&defect))?;
                let mut v = CMatrix::zeros(2 * m, m);
                v.view_mut((0, 0), (m, m)).copy_from(&k);
                v.view_mut((m, 0), (m, m)).copy_from(&root);
                let idx: Vec<usize> = (0..m).collect();
                Ok(FullSpaceModel {
                    isometry: v,
                    subspace: SubspaceProjector::from_indices(2 * m, &idx)?,
                })
            }
            ChannelFamily::Unitary {
                hamiltonian,
                subspace,
            } => {
                let u = hamiltonian.propagator(g, t)?;
                Ok(FullSpaceModel {
                    isometry: u * subspace.basis(),
                    subspace: subspace.clone(),
                })
            }
            ChannelFamily::Lindblad { .. } => Err(Error::NoFullSpaceModel),
        }
    }
}

/// How `g`-derivatives of evolved states are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeStrategy {
    /// Frechet derivative of the propagator, pushed through the channel.
    #[default]
    Analytic,
    /// Central differences with two-step Richardson extrapolation.
    FiniteDifference,
}

/// Base central-difference step `max(1e-6, 1e-6 |g|)`.
pub fn fd_step(g: f64) -> f64 {
    1e-6_f64.max(1e-6 * g.abs())
}

/// Richardson-extrapolated central difference of a list-valued function:
/// `(4 D(h) - D(2h)) / 3`.
pub fn richardson_derivative_many<F>(f: F, g: f64) -> Result<Vec<CMatrix>>
where
    F: Fn(f64) -> Result<Vec<CMatrix>>,
{
    let h = fd_step(g);
    let p1 = f(g + h)?;
    let m1 = f(g - h)?;
    let p2 = f(g + 2.0 * h)?;
    let m2 = f(g - 2.0 * h)?;
    if [&m1, &p2, &m2].iter().any(|v| v.len() != p1.len()) {
        return Err(Error::DimensionMismatch("family changed shape under differentiation".into()));
    }
    let mut out = Vec::with_capacity(p1.len());
    for i in 0..p1.len() {
        let d1 = (&p1[i] - &m1[i]) * c64(1.0 / (2.0 * h), 0.0);
        let d2 = (&p2[i] - &m2[i]) * c64(1.0 / (4.0 * h), 0.0);
        out.push((d1 * c64(4.0, 0.0) - d2) * c64(1.0 / 3.0, 0.0));
    }
    Ok(out)
}

pub fn richardson_derivative<F>(f: F, g: f64) -> Result<CMatrix>
where
    F: Fn(f64) -> Result<CMatrix>,
{
    let mut v = richardson_derivative_many(|x| f(x).map(|m| vec![m]), g)?;
    Ok(v.pop().expect("one entry"))
}

/// Single-system family `g -> Gamma(g, t)[rho(0)]` on `M`.
#[derive(Debug, Clone)]
pub struct EvolvedFamily {
    pub initial: CMatrix,
    pub channels: ChannelFamily,
    pub t: f64,
    pub strategy: DerivativeStrategy,
}

impl EvolvedFamily {
    pub fn new(initial: DensityOperator, channels: ChannelFamily, t: f64) -> Result<Self> {
        ensure_time(t)?;
        if initial.dim() != channels.dim_m() {
            return Err(Error::DimensionMismatch(format!(
                "initial state of dim {} vs channels on dim {}",
                initial.dim(),
                channels.dim_m()
            )));
        }
        Ok(Self {
            initial: initial.into_matrix(),
            channels,
            t,
            strategy: DerivativeStrategy::Analytic,
        })
    }

    pub fn with_strategy(mut self, strategy: DerivativeStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

impl LocalFamily for EvolvedFamily {
    fn dim_m(&self) -> usize {
        self.initial.nrows()
    }

    fn accessible(&self, g: f64) -> Result<CMatrix> {
        let out = self.channels.channel(g, self.t)?.apply(&self.initial)?;
        Ok(hermitian_part(&out))
    }

    fn accessible_with_derivative(&self, g: f64) -> Result<(CMatrix, CMatrix)> {
        match self.strategy {
            DerivativeStrategy::Analytic => {
                let ch = self.channels.channel(g, self.t)?;
                let zero = CMatrix::zeros(self.initial.nrows(), self.initial.ncols());
                let (y, dy) = ch.apply_with_derivative(&self.initial, &zero)?;
                Ok((hermitian_part(&y), hermitian_part(&dy)))
            }
            DerivativeStrategy::FiniteDifference => {
                let y = self.accessible(g)?;
                let dy = richardson_derivative(|x| self.accessible(x), g)?;
                Ok((y, hermitian_part(&dy)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::testutil::*;
    use crate::operator::{pauli, tensor};
    use approx::assert_abs_diff_eq;

    fn close(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    fn decay_family(gp: f64, gm: f64) -> HamiltonianFamily {
        let mut h0 = CMatrix::zeros(2, 2);
        h0[(0, 0)] = c64(0.0, -gp);
        h0[(1, 1)] = c64(0.0, -gm);
        HamiltonianFamily::affine(h0, pauli::x(), false).unwrap()
    }

    /// Random dissipative effective Hamiltonian `H - i Gamma` with `Gamma >= 0`.
    fn random_effective(r: &mut impl rand::Rng, d: usize) -> HamiltonianFamily {
        let h0 = random_hermitian(r, d);
        let a = random_matrix(r, d, d);
        let gamma = &a * a.adjoint() * c64(0.5, 0.0);
        let h1 = random_hermitian(r, d);
        HamiltonianFamily::affine(h0 - gamma * c64(0.0, 1.0), h1, false).unwrap()
    }

    fn random_unitary_family(r: &mut impl rand::Rng, full: usize, m: usize) -> ChannelFamily {
        let h = HamiltonianFamily::affine(random_hermitian(r, full), random_hermitian(r, full), true).unwrap();
        let idx: Vec<usize> = (0..m).collect();
        ChannelFamily::unitary(h, SubspaceProjector::from_indices(full, &idx).unwrap()).unwrap()
    }

    #[test]
    fn polynomial_family_and_derivative() {
        let c0 = pauli::z();
        let c1 = pauli::x();
        let c2 = pauli::y();
        let h = HamiltonianFamily::new(vec![c0.clone(), c1.clone(), c2.clone()], true).unwrap();
        let g = 0.3;
        let want = &c0 + &c1 * c64(g, 0.) + &c2 * c64(g * g, 0.);
        assert!(close(&h.at(g), &want) < 1e-15);
        let dwant = &c1 + &c2 * c64(2.0 * g, 0.);
        assert!(close(&h.derivative(g), &dwant) < 1e-15);
        assert!(HamiltonianFamily::new(vec![decay_family(1., 2.).at(0.0)], true).is_err());
    }

    #[test]
    fn hermitian_evolution_preserves_trace() {
        let mut r = rng(30);
        let h = HamiltonianFamily::affine(random_hermitian(&mut r, 3), random_hermitian(&mut r, 3), true).unwrap();
        let rho0 = DensityOperator::normalized(random_density(&mut r, 3, 3)).unwrap();
        let rho = evolve_nonhermitian(&h, &rho0, 0.4, 2.5).unwrap();
        assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn decay_without_coupling() {
        let h = decay_family(2.0, 1.0);
        let plus = CVector::from_vec(vec![c64(1., 0.), c64(0., 0.)]);
        let rho0 = DensityOperator::pure(&plus).unwrap();
        let t = 0.7;
        let rho = evolve_nonhermitian(&h, &rho0, 0.0, t).unwrap();
        let mut want = CMatrix::zeros(2, 2);
        want[(0, 0)] = c64((-2.0 * 2.0 * t).exp(), 0.0);
        assert!(close(rho.matrix(), &want) < 1e-14);
    }

    #[test]
    fn decay_first_order_coherence() {
        let (gp, gm) = (2.0, 1.0);
        let h = decay_family(gp, gm);
        let plus = CVector::from_vec(vec![c64(1., 0.), c64(0., 0.)]);
        let rho0 = DensityOperator::pure(&plus).unwrap();
        let t = 1.1;
        let d = ((-gp * t).exp() - (-gm * t).exp()) / (gp - gm);
        for g in [1e-3, 1e-4] {
            let rho = evolve_nonhermitian(&h, &rho0, g, t).unwrap();
            // <-|rho|+> = (i g d) e^{-G+ t}
            let want = c64(0.0, g * d) * (-gp * t).exp();
            let got = rho.matrix()[(1, 0)];
            assert!((got - want).norm() < 10.0 * g * g, "g={g}: {got} vs {want}");
        }
    }

    #[test]
    fn non_dissipative_evolution_is_rejected() {
        let mut h0 = CMatrix::zeros(2, 2);
        h0[(0, 0)] = c64(0.0, 1.0); // gain
        let h = HamiltonianFamily::new(vec![h0], false).unwrap();
        let rho0 = DensityOperator::normalized(identity(2) * c64(0.5, 0.)).unwrap();
        assert!(matches!(
            evolve_nonhermitian(&h, &rho0, 0.0, 1.0),
            Err(Error::NonDissipative(_))
        ));
    }

    #[test]
    fn unitary_channel_examples() {
        let mut r = rng(31);
        let fam = random_unitary_family(&mut r, 4, 2);
        let id = fam.channel(0.2, 0.0).unwrap();
        assert!(close(id.superoperator(), &identity(4)) < 1e-14);
        // P = 1: trace preserving
        let h = HamiltonianFamily::affine(random_hermitian(&mut r, 3), random_hermitian(&mut r, 3), true).unwrap();
        let ch = channel_from_unitary(&h, &SubspaceProjector::full(3), 0.1, 1.3).unwrap();
        let rho = random_density(&mut r, 3, 2);
        assert_abs_diff_eq!(trace_re(&ch.apply(&rho).unwrap()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unitary_channel_cp_and_trace_nonincreasing() {
        let mut r = rng(32);
        let fam = random_unitary_family(&mut r, 4, 2);
        let ch = fam.channel(0.3, 0.9).unwrap();
        // Choi oracle: build directly from the Kraus operator's vectorisation
        let ChannelFamily::Unitary { hamiltonian, subspace } = &fam else { unreachable!() };
        let k = subspace.compress(&hamiltonian.propagator(0.3, 0.9).unwrap());
        let mut kvec = CVector::zeros(4);
        for i in 0..2 {
            for a in 0..2 {
                kvec[i * 2 + a] = k[(a, i)];
            }
        }
        let choi_oracle = &kvec * kvec.adjoint();
        assert!(close(&ch.choi(), &choi_oracle) < 1e-12);
        assert!(ch.choi_min_eigenvalue().unwrap() > -1e-12);
        for _ in 0..50 {
            let rho = random_density(&mut r, 2, 2);
            assert!(trace_re(&ch.apply(&rho).unwrap()) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn lindblad_identity_and_semigroup() {
        let mut r = rng(33);
        let h = random_effective(&mut r, 3);
        let gen = ChannelFamily::effective(h).generator(0.2).unwrap();
        assert!(close(gen.channel(0.0).unwrap().superoperator(), &identity(9)) < 1e-14);
        let a = gen.channel(0.4).unwrap();
        let b = gen.channel(0.7).unwrap();
        let ab = gen.channel(1.1).unwrap();
        assert!(close(a.compose(&b).unwrap().superoperator(), ab.superoperator()) < 1e-9);
    }

    #[test]
    fn lindblad_matches_effective_evolution() {
        let h = decay_family(2.0, 1.0);
        let fam = ChannelFamily::effective(h.clone());
        let gen = fam.generator(0.05).unwrap();
        let mut r = rng(34);
        let rho0 = DensityOperator::normalized(random_density(&mut r, 2, 2)).unwrap();
        for t in [0.1, 0.8, 2.0] {
            let via_gen = gen.channel(t).unwrap().apply(rho0.matrix()).unwrap();
            let direct = evolve_nonhermitian(&h, &rho0, 0.05, t).unwrap();
            assert!(close(&via_gen, direct.matrix()) < 1e-9);
        }
    }

    #[test]
    fn lindblad_with_jumps_is_trace_preserving() {
        let mut r = rng(35);
        let h = HamiltonianFamily::affine(random_hermitian(&mut r, 2), pauli::x(), true).unwrap();
        let mut lower = CMatrix::zeros(2, 2);
        lower[(1, 0)] = c64(0.8, 0.0);
        let fam = ChannelFamily::lindblad(h, vec![lower]).unwrap();
        let ch = fam.channel(0.1, 1.5).unwrap();
        let rho = random_density(&mut r, 2, 2);
        assert_abs_diff_eq!(trace_re(&ch.apply(&rho).unwrap()), 1.0, epsilon = 1e-10);
        assert!(matches!(fam.full_space(0.1, 1.0), Err(Error::NoFullSpaceModel)));
    }

    #[test]
    fn generator_matches_short_time_difference() {
        let mut r = rng(36);
        for fam in [
            ChannelFamily::effective(random_effective(&mut r, 2)),
            random_unitary_family(&mut r, 4, 2),
        ] {
            let gen = fam.generator(0.3).unwrap();
            let x = random_hermitian(&mut r, 2);
            let delta = 1e-6;
            let fd = (fam.channel(0.3, delta).unwrap().apply(&x).unwrap() - &x) * c64(1.0 / delta, 0.0);
            assert!(close(&fd, &gen.apply(&x).unwrap()) < 1e-4);
        }
    }

    #[test]
    fn positivity_preserved_on_random_inputs() {
        let mut r = rng(37);
        let chans = [
            ChannelFamily::effective(random_effective(&mut r, 3)).channel(0.1, 0.8).unwrap(),
            random_unitary_family(&mut r, 5, 3).channel(0.2, 1.7).unwrap(),
        ];
        for ch in &chans {
            for _ in 0..100 {
                let rho = random_density(&mut r, 3, 2);
                let out = hermitian_part(&ch.apply(&rho).unwrap());
                assert!(hermitian_eig(&out).unwrap().min_value() > -1e-10);
            }
        }
    }

    #[test]
    fn trace_is_monotone_for_dissipative_models() {
        let mut r = rng(38);
        let fam = ChannelFamily::effective(random_effective(&mut r, 3));
        let rho = random_density(&mut r, 3, 3);
        let mut last = 1.0 + 1e-15;
        for k in 0..30 {
            let tr = trace_re(&fam.channel(0.2, 0.1 * k as f64).unwrap().apply(&rho).unwrap());
            assert!(tr <= last + 1e-13);
            last = tr;
        }
    }

    /// Oracle: dense superoperator of `Gamma (x) Gamma` assembled from the
    /// action on product basis matrices `E_ij (x) E_kl`.
    fn tensor_square_oracle(ch: &QuantumChannel, x: &CMatrix) -> CMatrix {
        let d = ch.dim();
        let mut out = CMatrix::zeros(d * d, d * d);
        let unit = |i: usize, j: usize| {
            let mut e = CMatrix::zeros(d, d);
            e[(i, j)] = c64(1.0, 0.0);
            e
        };
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let coef = x[(i * d + k, j * d + l)];
                        let img = tensor(&ch.apply(&unit(i, j)).unwrap(), &ch.apply(&unit(k, l)).unwrap());
                        out += img * coef;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn tensor_apply_examples() {
        let mut r = rng(39);
        let ch = ChannelFamily::effective(random_effective(&mut r, 2)).channel(0.3, 0.6).unwrap();
        let x = random_hermitian(&mut r, 2);
        assert!(close(&channel_tensor_apply(&ch, 1, &x).unwrap(), &ch.apply(&x).unwrap()) < 1e-14);
        let a = random_hermitian(&mut r, 2);
        let b = random_hermitian(&mut r, 2);
        let prod = channel_tensor_apply(&ch, 2, &tensor(&a, &b)).unwrap();
        let want = tensor(&ch.apply(&a).unwrap(), &ch.apply(&b).unwrap());
        assert!(close(&prod, &want) < 1e-13);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = CVector::from_vec(vec![c64(s, 0.), c64(0., 0.), c64(0., 0.), c64(s, 0.)]);
        let rho = &bell * bell.adjoint();
        let got = channel_tensor_apply(&ch, 2, &rho).unwrap();
        assert!(close(&got, &tensor_square_oracle(&ch, &rho)) < 1e-10);
        assert!(channel_tensor_apply(&ch, 2, &x).is_err());
    }

    #[test]
    fn tensor_apply_derivative_matches_finite_difference() {
        let mut r = rng(40);
        let fam = random_unitary_family(&mut r, 3, 2);
        let rho = random_density(&mut r, 8, 3);
        let zero = CMatrix::zeros(8, 8);
        let g = 0.25;
        let (y, dy) = channel_tensor_apply_with_derivative(&fam.channel(g, 0.8).unwrap(), 3, &rho, &zero).unwrap();
        assert!(close(&y, &channel_tensor_apply(&fam.channel(g, 0.8).unwrap(), 3, &rho).unwrap()) < 1e-14);
        let fd = richardson_derivative(
            |x| channel_tensor_apply(&fam.channel(x, 0.8)?, 3, &rho),
            g,
        )
        .unwrap();
        assert!(close(&dy, &fd) < 1e-8);
    }

    #[test]
    fn analytic_and_fd_channel_derivatives_agree() {
        let mut r = rng(41);
        let fams = [
            ChannelFamily::effective(random_effective(&mut r, 2)),
            random_unitary_family(&mut r, 4, 2),
        ];
        let mut lower = CMatrix::zeros(2, 2);
        lower[(1, 0)] = c64(0.5, 0.0);
        let lind = ChannelFamily::lindblad(
            HamiltonianFamily::affine(random_hermitian(&mut r, 2), random_hermitian(&mut r, 2), true).unwrap(),
            vec![lower],
        )
        .unwrap();
        for fam in fams.iter().chain(std::iter::once(&lind)) {
            let ch = fam.channel(0.4, 1.2).unwrap();
            let fd = richardson_derivative(|x| Ok(fam.channel(x, 1.2)?.superoperator().clone()), 0.4).unwrap();
            assert!(close(ch.derivative().unwrap(), &fd) < 1e-8);
        }
    }

    #[test]
    fn dilation_reproduces_channel() {
        let mut r = rng(42);
        let fam = ChannelFamily::effective(random_effective(&mut r, 2));
        let full = fam.full_space(0.3, 0.9).unwrap();
        let v = &full.isometry;
        assert!(close(&(v.adjoint() * v), &identity(2)) < 1e-12);
        let rho = random_density(&mut r, 2, 2);
        let tot = v * &rho * v.adjoint();
        let par = full.subspace.compress(&tot);
        let via = fam.channel(0.3, 0.9).unwrap().apply(&rho).unwrap();
        assert!(close(&par, &via) < 1e-12);
    }

    #[test]
    fn evolved_family_strategies_agree() {
        let mut r = rng(43);
        let rho0 = DensityOperator::normalized(random_density(&mut r, 2, 1)).unwrap();
        let fam = EvolvedFamily::new(rho0, ChannelFamily::effective(decay_family(2.0, 1.0)), 0.9).unwrap();
        let (a, da) = fam.accessible_with_derivative(1e-3).unwrap();
        let fd = fam.clone().with_strategy(DerivativeStrategy::FiniteDifference);
        let (b, db) = fd.accessible_with_derivative(1e-3).unwrap();
        assert!(close(&a, &b) < 1e-15);
        assert!(close(&da, &db) < 1e-8);
    }
}
