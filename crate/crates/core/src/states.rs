//! Density operators, the accessible subspace, the blank-state extension and
//! the block-structured composite local state.
//!
//! The blank vector `|B>` is always the LAST basis index of an extended space.
//! Composite states keep only the diagonal blocks: block `s` (a set of
//! subsystems that are blank) is an operator on `M^(N - |s|)` whose tensor
//! factors are the non-blank subsystems in increasing order.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::fisher::LocalEstimator;
use crate::operator::{
    ensure_hermitian, ensure_square, hermitian_eig, identity, max_abs, partial_trace, tensor_all,
    trace_re, POSITIVITY_TOL,
};
use crate::{CMatrix, CVector, Error, Result};

/// Allowed deviation of a normalised trace from one.
pub const TRACE_TOL: f64 = 1e-9;
/// Accessible traces below this are treated as the state having left `M`.
pub const ESCAPE_TOL: f64 = 1e-12;
/// Tolerance for `B^dagger B = 1` on subspace bases.
pub const ORTHONORMAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceClass {
    Normalized,
    Subnormalized,
}

/// Positive semidefinite matrix with trace one (`Normalized`) or in `(0, 1]`
/// (`Subnormalized`).
#[derive(Debug, Clone)]
pub struct DensityOperator {
    matrix: CMatrix,
    trace_class: TraceClass,
}

impl DensityOperator {
    /// Validates Hermiticity, positivity (eigenvalues down to `-1e-10` are
    /// clipped) and the trace condition of `class`.
    pub fn new(matrix: CMatrix, class: TraceClass) -> Result<Self> {
        ensure_hermitian(&matrix)?;
        let eig = hermitian_eig(&matrix)?;
        let min = eig.min_value();
        if min < -POSITIVITY_TOL {
            return Err(Error::NotPositive(min));
        }
        let matrix = if min < 0.0 {
            eig.map_values(|x| x.max(0.0))
        } else {
            matrix
        };
        let tr = trace_re(&matrix);
        match class {
            TraceClass::Normalized if (tr - 1.0).abs() > TRACE_TOL => {
                return Err(Error::InvalidTrace {
                    trace: tr,
                    reason: "normalized state must have unit trace",
                })
            }
            TraceClass::Subnormalized if tr <= 0.0 || tr > 1.0 + TRACE_TOL => {
                return Err(Error::InvalidTrace {
                    trace: tr,
                    reason: "subnormalized state needs trace in (0, 1]",
                })
            }
            _ => {}
        }
        Ok(Self {
            matrix,
            trace_class: class,
        })
    }

    pub fn normalized(matrix: CMatrix) -> Result<Self> {
        Self::new(matrix, TraceClass::Normalized)
    }

    pub fn subnormalized(matrix: CMatrix) -> Result<Self> {
        Self::new(matrix, TraceClass::Subnormalized)
    }

    /// `|psi><psi|`, normalised if `<psi|psi> = 1` within tolerance.
    pub fn pure(psi: &CVector) -> Result<Self> {
        let n = psi.norm_squared();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let class = if (n - 1.0).abs() <= TRACE_TOL {
            TraceClass::Normalized
        } else {
            TraceClass::Subnormalized
        };
        Self::new(psi * psi.adjoint(), class)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace_re(&self.matrix)
    }

    pub fn trace_class(&self) -> TraceClass {
        self.trace_class
    }
}

/// Orthogonal projector onto the accessible subspace `M`, stored as an
/// orthonormal basis (columns of a `full_dim x rank` matrix).
#[derive(Debug, Clone)]
pub struct SubspaceProjector {
    basis: CMatrix,
}

impl SubspaceProjector {
    pub fn new(basis: CMatrix) -> Result<Self> {
        if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "subspace basis must have 1..={} columns, got {}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        let gram = basis.adjoint() * &basis - identity(basis.ncols());
        let defect = max_abs(&gram);
        if defect > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(defect));
        }
        Ok(Self { basis })
    }

    /// Subspace spanned by the listed computational basis vectors.
    pub fn from_indices(full_dim: usize, indices: &[usize]) -> Result<Self> {
        let mut basis = CMatrix::zeros(full_dim, indices.len());
        for (col, &i) in indices.iter().enumerate() {
            if i >= full_dim {
                return Err(Error::DimensionMismatch(format!(
                    "basis index {i} out of range for dimension {full_dim}"
                )));
            }
            if basis[(i, col)] != Complex64::new(0.0, 0.0) || indices[..col].contains(&i) {
                return Err(Error::InvalidArgument(format!("duplicate basis index {i}")));
            }
            basis[(i, col)] = Complex64::new(1.0, 0.0);
        }
        Self::new(basis)
    }

    /// The whole space (`P = 1`).
    pub fn full(dim: usize) -> Self {
        Self {
            basis: identity(dim),
        }
    }

    pub fn full_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    /// `P = B B^dagger` on the full space.
    pub fn projector(&self) -> CMatrix {
        &self.basis * self.basis.adjoint()
    }

    /// Orthonormal basis of the orthogonal complement (`full_dim x (full_dim - rank)`).
    pub fn complement_basis(&self) -> CMatrix {
        let n = self.full_dim();
        let k = n - self.rank();
        if k == 0 {
            return CMatrix::zeros(n, 0);
        }
        let q = identity(n) - self.projector();
        // eigenvalues of 1 - P are 1 (k times) then 0; eig sorts descending
        let eig = hermitian_eig(&q).expect("1 - P is Hermitian");
        eig.vectors.columns(0, k).into_owned()
    }

    /// `B^dagger X B`: operator on the full space restricted to `M`.
    pub fn compress(&self, x: &CMatrix) -> CMatrix {
        self.basis.adjoint() * x * &self.basis
    }

    /// `B Y B^dagger`: operator on `M` embedded into the full space.
    pub fn embed(&self, y: &CMatrix) -> CMatrix {
        &self.basis * y * self.basis.adjoint()
    }
}

/// `P rho P` compressed to `M`. Rejects states that have (numerically) left `M`.
pub fn project_accessible(rho_tot: &DensityOperator, p: &SubspaceProjector) -> Result<DensityOperator> {
    if rho_tot.dim() != p.full_dim() {
        return Err(Error::DimensionMismatch(format!(
            "state of dim {} vs projector on dim {}",
            rho_tot.dim(),
            p.full_dim()
        )));
    }
    let par = p.compress(rho_tot.matrix());
    let tr = trace_re(&par);
    if tr < ESCAPE_TOL {
        return Err(Error::OutsideTimeDomain(tr));
    }
    DensityOperator::subnormalized(crate::operator::hermitian_part(&par))
}

/// Unit-trace state on `M (+) C|B>`: the accessible block plus the weight that
/// has left `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlankExtendedState {
    pub accessible: CMatrix,
    pub blank_weight: f64,
}

impl BlankExtendedState {
    pub fn dim_m(&self) -> usize {
        self.accessible.nrows()
    }

    /// Dense `(dim_m + 1)`-dimensional matrix with the blank index last.
    pub fn to_dense(&self) -> CMatrix {
        let m = self.dim_m();
        let mut out = CMatrix::zeros(m + 1, m + 1);
        out.view_mut((0, 0), (m, m)).copy_from(&self.accessible);
        out[(m, m)] = Complex64::new(self.blank_weight, 0.0);
        out
    }

    pub fn total_trace(&self) -> f64 {
        trace_re(&self.accessible) + self.blank_weight
    }

    /// `E[A] = Tr[rho_par A_par] + a_perp (1 - Tr rho_par)`.
    pub fn expectation(&self, est: &LocalEstimator) -> Result<f64> {
        self.check_estimator(est)?;
        Ok(trace_re(&(&self.accessible * est.accessible())) + est.blank_value() * self.blank_weight)
    }

    /// Born variance of the local estimator.
    pub fn variance(&self, est: &LocalEstimator) -> Result<f64> {
        let mean = self.expectation(est)?;
        let a = est.accessible();
        let second = trace_re(&(&self.accessible * a * a))
            + est.blank_value().powi(2) * self.blank_weight;
        Ok((second - mean * mean).max(0.0))
    }

    fn check_estimator(&self, est: &LocalEstimator) -> Result<()> {
        if est.dim_m() != self.dim_m() {
            return Err(Error::DimensionMismatch(format!(
                "estimator on dim {} vs state on dim {}",
                est.dim_m(),
                self.dim_m()
            )));
        }
        Ok(())
    }
}

/// Appends the blank state with weight `1 - Tr rho_par`.
pub fn extend_with_blank(rho_par: &DensityOperator) -> BlankExtendedState {
    let tr = rho_par.trace();
    BlankExtendedState {
        accessible: rho_par.matrix().clone(),
        blank_weight: (1.0 - tr).max(0.0),
    }
}

/// Maximum number of subsystems a [`Subsequence`] can address.
pub const MAX_SUBSYSTEMS: usize = 16;

/// Ordered subset of subsystems, stored as a bitmask (bit `k` = subsystem `k`,
/// zero-based). Displays one-based: `[1,3]`, with `[]` for the empty set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Subsequence(u32);

impl Subsequence {
    pub const EMPTY: Subsequence = Subsequence(0);

    pub fn from_mask(mask: u32) -> Self {
        Subsequence(mask)
    }

    /// From zero-based subsystem indices.
    pub fn from_sites(sites: &[usize]) -> Self {
        Subsequence(sites.iter().fold(0, |acc, &s| acc | (1 << s)))
    }

    /// Every subsystem of `n`.
    pub fn full(n: usize) -> Self {
        Subsequence(((1u64 << n) - 1) as u32)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, site: usize) -> bool {
        self.0 & (1 << site) != 0
    }

    pub fn is_subset_of(self, other: Subsequence) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn difference(self, other: Subsequence) -> Subsequence {
        Subsequence(self.0 & !other.0)
    }

    /// Zero-based members in increasing order.
    pub fn sites(self) -> Vec<usize> {
        (0..32).filter(|&k| self.contains(k)).collect()
    }

    /// Members of `0..n` not in `self`, in increasing order.
    pub fn complement_sites(self, n: usize) -> Vec<usize> {
        (0..n).filter(|&k| !self.contains(k)).collect()
    }

    /// All `2^n` subsequences of `n` subsystems, ordered by size then lexicographically.
    pub fn all(n: usize) -> Vec<Subsequence> {
        let mut v: Vec<Subsequence> = (0..(1u32 << n)).map(Subsequence).collect();
        v.sort();
        v
    }

    /// All subsets of `self` (including the empty set and `self`).
    pub fn subsets(self) -> Vec<Subsequence> {
        let mut out = Vec::with_capacity(1 << self.len());
        let mut sub = self.0;
        loop {
            out.push(Subsequence(sub));
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & self.0;
        }
        out.sort();
        out
    }

    /// Parses `[1,2]`, `1,2`, `[]` or the empty string (one-based labels).
    pub fn parse(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('[').trim_end_matches(']').trim();
        if inner.is_empty() {
            return Ok(Self::EMPTY);
        }
        let mut mask = 0u32;
        for part in inner.split(',') {
            let k: usize = part.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("bad subsequence label {part:?} in {s:?}"))
            })?;
            if k == 0 || k > MAX_SUBSYSTEMS {
                return Err(Error::InvalidArgument(format!(
                    "subsystem label {k} must be in 1..={MAX_SUBSYSTEMS}"
                )));
            }
            mask |= 1 << (k - 1);
        }
        Ok(Subsequence(mask))
    }
}

impl PartialOrd for Subsequence {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Subsequence {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.sites().cmp(&other.sites()))
    }
}

impl fmt::Display for Subsequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.sites().iter().map(|k| (k + 1).to_string()).collect();
        write!(f, "[{}]", labels.join(","))
    }
}

/// Local density operator of `N` subsystems, stored as its `2^N` diagonal blocks.
#[derive(Debug, Clone)]
pub struct CompositeLocalState {
    n: usize,
    dim_m: usize,
    blocks: BTreeMap<Subsequence, CMatrix>,
}

/// Largest `N` for which [`CompositeLocalState::to_dense`] is offered.
pub const MAX_DENSE_SUBSYSTEMS: usize = 3;

impl CompositeLocalState {
    /// Validates shapes, Hermiticity, positivity and total trace.
    pub fn new(n: usize, dim_m: usize, blocks: BTreeMap<Subsequence, CMatrix>) -> Result<Self> {
        let state = Self::new_unchecked(n, dim_m, blocks)?;
        for (s, b) in &state.blocks {
            ensure_hermitian(b)?;
            let min = hermitian_eig(b)?.min_value();
            if min < -POSITIVITY_TOL {
                return Err(Error::NegativeDescendant {
                    subsequence: s.to_string(),
                    min_eigenvalue: min,
                });
            }
        }
        let tr = state.total_trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidTrace {
                trace: tr,
                reason: "composite block traces must sum to one",
            });
        }
        Ok(state)
    }

    /// Checks only that the block set and shapes are complete.
    pub(crate) fn new_unchecked(
        n: usize,
        dim_m: usize,
        blocks: BTreeMap<Subsequence, CMatrix>,
    ) -> Result<Self> {
        if n == 0 || n > MAX_SUBSYSTEMS {
            return Err(Error::TooLarge {
                what: "subsystem count",
                value: n,
                max: MAX_SUBSYSTEMS,
            });
        }
        if blocks.len() != 1 << n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} blocks for N = {n}, got {}",
                1 << n,
                blocks.len()
            )));
        }
        for (s, b) in &blocks {
            if !s.is_subset_of(Subsequence::full(n)) {
                return Err(Error::DimensionMismatch(format!("block {s} outside N = {n}")));
            }
            let d = dim_m.pow((n - s.len()) as u32);
            if b.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!(
                    "block {s} should be {d}x{d}, got {:?}",
                    b.shape()
                )));
            }
        }
        Ok(Self { n, dim_m, blocks })
    }

    pub fn n_subsystems(&self) -> usize {
        self.n
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn blocks(&self) -> &BTreeMap<Subsequence, CMatrix> {
        &self.blocks
    }

    pub fn block(&self, s: Subsequence) -> &CMatrix {
        &self.blocks[&s]
    }

    /// The accessible operator `rho_par^(N)` (no blank subsystem).
    pub fn accessible(&self) -> &CMatrix {
        self.block(Subsequence::EMPTY)
    }

    pub fn total_trace(&self) -> f64 {
        self.blocks.values().map(trace_re).sum()
    }

    /// Dense operator on `(dim_m + 1)^N`, blank index last on every site.
    pub fn to_dense(&self) -> Result<CMatrix> {
        if self.n > MAX_DENSE_SUBSYSTEMS {
            return Err(Error::TooLarge {
                what: "dense reconstruction subsystems",
                value: self.n,
                max: MAX_DENSE_SUBSYSTEMS,
            });
        }
        let d = self.dim_m;
        let ext = d + 1;
        let total = ext.pow(self.n as u32);
        let mut out = CMatrix::zeros(total, total);
        for (s, b) in &self.blocks {
            let kept = s.complement_sites(self.n);
            let map = |k: usize| -> usize {
                // block index k enumerates kept-site labels row-major
                let mut labels = vec![d; self.n];
                let mut rem = k;
                for &site in kept.iter().rev() {
                    labels[site] = rem % d;
                    rem /= d;
                }
                labels.iter().fold(0, |acc, &l| acc * ext + l)
            };
            for r in 0..b.nrows() {
                let fr = map(r);
                for c in 0..b.ncols() {
                    out[(fr, map(c))] = b[(r, c)];
                }
            }
        }
        Ok(out)
    }

    /// `Tr[rho^(N) A~^(N)]` summed block by block.
    pub fn expectation(&self, est: &CompositeEstimator) -> Result<f64> {
        match est {
            CompositeEstimator::Product(factors) => {
                if factors.len() != self.n {
                    return Err(Error::DimensionMismatch(format!(
                        "{} estimator factors for {} subsystems",
                        factors.len(),
                        self.n
                    )));
                }
                for f in factors {
                    if f.dim_m() != self.dim_m {
                        return Err(Error::DimensionMismatch(
                            "estimator factor dimension".into(),
                        ));
                    }
                }
                let mut total = 0.0;
                for (s, b) in &self.blocks {
                    let blank: f64 = s.sites().iter().map(|&k| factors[k].blank_value()).product();
                    if blank == 0.0 {
                        continue;
                    }
                    let kept: Vec<&CMatrix> = s
                        .complement_sites(self.n)
                        .into_iter()
                        .map(|k| factors[k].accessible())
                        .collect();
                    let op = tensor_all(kept);
                    total += blank * trace_re(&(b * op));
                }
                Ok(total)
            }
            CompositeEstimator::Dense(a) => {
                ensure_hermitian(a)?;
                let dense = self.to_dense()?;
                if a.shape() != dense.shape() {
                    return Err(Error::DimensionMismatch(format!(
                        "dense estimator {:?} vs extended space {:?}",
                        a.shape(),
                        dense.shape()
                    )));
                }
                Ok(trace_re(&(dense * a)))
            }
        }
    }
}

/// Local estimator on a composite system.
#[derive(Debug, Clone)]
pub enum CompositeEstimator {
    /// `A~_1 (x) ... (x) A~_N`.
    Product(Vec<LocalEstimator>),
    /// Arbitrary Hermitian operator on `(dim_m + 1)^N`, blank index last per site.
    Dense(CMatrix),
}

/// Splits an `N`-fold state on the full space into its composite local blocks.
///
/// Block `s` is obtained by projecting the subsystems in `s` onto the
/// complement of `M`, the others onto `M`, and tracing out the subsystems in `s`.
pub fn composite_local_state(
    rho_tot: &DensityOperator,
    p: &SubspaceProjector,
    n: usize,
) -> Result<CompositeLocalState> {
    let full = p.full_dim();
    let total = full.checked_pow(n as u32).unwrap_or(usize::MAX);
    if rho_tot.dim() != total {
        return Err(Error::DimensionMismatch(format!(
            "state of dim {} is not {n} copies of dim {full}",
            rho_tot.dim()
        )));
    }
    let b = p.basis().adjoint();
    let q = p.complement_basis().adjoint();
    let rho = rho_tot.matrix();
    let mut blocks = BTreeMap::new();
    for s in Subsequence::all(n) {
        let factors: Vec<&CMatrix> = (0..n).map(|k| if s.contains(k) { &q } else { &b }).collect();
        let dims: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
        let w = tensor_all(factors.iter().copied());
        let sandwiched = &w * rho * w.adjoint();
        let block = if w.nrows() == 0 {
            CMatrix::zeros(
                p.rank().pow((n - s.len()) as u32),
                p.rank().pow((n - s.len()) as u32),
            )
        } else {
            partial_trace(&sandwiched, &dims, &s.sites())?
        };
        blocks.insert(s, crate::operator::hermitian_part(&block));
    }
    CompositeLocalState::new_unchecked(n, p.rank(), blocks)
}

/// Checks a composite local state and reports the smallest block eigenvalue.
pub fn min_block_eigenvalue(state: &CompositeLocalState) -> Result<f64> {
    let mut min = f64::INFINITY;
    for b in state.blocks().values() {
        ensure_square(b)?;
        min = min.min(hermitian_eig(b)?.min_value());
    }
    Ok(min)
}
