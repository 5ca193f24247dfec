//! Dense complex matrix algebra.
//!
//! Everything here works on [`CMatrix`] values and is free of shared state.
//! The Hermitian eigendecomposition and the matrix exponential delegate to
//! `nalgebra`; the symmetric logarithmic derivative solver, partial traces
//! and the Hermitian operator basis are implemented here.
//!
//! Index convention: tensor products are row-major, the leftmost factor is
//! subsystem 0, and the combined index of `(i_a, i_b)` is `i_a * dim_b + i_b`.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::{CMatrix, Error, Result};

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues in `[-POSITIVITY_TOL, 0)` are clipped to zero; anything more
/// negative is rejected.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Relative support cutoff: eigenvalue pairs with `l_i + l_j <= SUPPORT_CUTOFF * l_max`
/// belong to the kernel of the state.
pub const SUPPORT_CUTOFF: f64 = 1e-10;
/// Relative size of a kernel-to-kernel derivative component above which the
/// SLD equation is declared unsolvable.
pub const KERNEL_REJECT: f64 = 1e-6;
/// Largest 1-norm accepted by [`matrix_exp`].
pub const EXP_NORM_LIMIT: f64 = 700.0;

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Real part of the trace; callers use it on Hermitian matrices.
pub fn trace_re(m: &CMatrix) -> f64 {
    trace(m).re
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// `max |M - M^dagger|`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(m: &CMatrix) -> bool {
    hermiticity_defect(m) <= HERMITIAN_TOL * max_abs(m).max(1.0)
}

/// `(M + M^dagger) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub(crate) fn ensure_square(m: &CMatrix) -> Result<usize> {
    if m.is_square() {
        Ok(m.nrows())
    } else {
        Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

pub(crate) fn ensure_hermitian(m: &CMatrix) -> Result<()> {
    ensure_square(m)?;
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let defect = hermiticity_defect(m);
    if defect > HERMITIAN_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

pub(crate) fn ensure_same_shape(a: &CMatrix, b: &CMatrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Spectral decomposition `M = V diag(values) V^dagger` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Eigenvalues sorted in descending order.
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the matching eigenvectors.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> CMatrix {
        self.map_values(|x| x)
    }

    /// `V diag(f(values)) V^dagger`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(f(lambda));
        }
        &scaled * self.vectors.adjoint()
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted descending.
pub fn hermitian_eig(m: &CMatrix) -> Result<HermitianEigen> {
    ensure_hermitian(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(HermitianEigen {
            values: Vec::new(),
            vectors: CMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEigen { values, vectors })
}

/// Returns `m` with eigenvalues in `[-tol, 0)` set to zero, together with the
/// smallest eigenvalue found. Fails on anything more negative than `-tol`.
pub fn clip_to_positive(m: &CMatrix, tol: f64) -> Result<(CMatrix, f64)> {
    let eig = hermitian_eig(m)?;
    let min = eig.min_value();
    if min < -tol {
        return Err(Error::NotPositive(min));
    }
    if min < 0.0 {
        Ok((eig.map_values(|x| x.max(0.0)), min))
    } else {
        Ok((m.clone(), min))
    }
}

/// Principal square root of a positive semidefinite matrix.
pub fn positive_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    if eig.min_value() < -POSITIVITY_TOL * eig.max_value().abs().max(1.0) {
        return Err(Error::NotPositive(eig.min_value()));
    }
    Ok(eig.map_values(|x| x.max(0.0).sqrt()))
}

/// Solution of the SLD equation `(rho L + L rho) / 2 = d rho`.
#[derive(Debug, Clone)]
pub struct Sld {
    /// Hermitian SLD, zero on the kernel-kernel block of `rho`.
    pub matrix: CMatrix,
    /// Number of eigenvalues of `rho` above the support cutoff.
    pub support_rank: usize,
    /// Largest `|(d rho)_ij|` (eigenbasis of `rho`) over kernel-kernel pairs.
    /// No SLD can reproduce these components.
    pub kernel_leak: f64,
}

/// Symmetric logarithmic derivative of `rho` for the derivative `drho`.
///
/// In the eigenbasis of `rho`, `L_ij = 2 (d rho)_ij / (l_i + l_j)` when
/// `l_i + l_j > SUPPORT_CUTOFF * l_max` and zero otherwise. `rho` only needs to
/// be positive semidefinite; its trace is not constrained, so the same solver
/// serves accessible operators and composite blocks.
pub fn solve_sld(rho: &CMatrix, drho: &CMatrix) -> Result<Sld> {
    ensure_same_shape(rho, drho, "solve_sld")?;
    ensure_hermitian(drho)?;
    let eig = hermitian_eig(rho)?;
    let n = rho.nrows();
    let lambda_max = eig.max_value().max(0.0);
    if eig.min_value() < -POSITIVITY_TOL * lambda_max.max(1.0) {
        return Err(Error::NotPositive(eig.min_value()));
    }
    let lambdas: Vec<f64> = eig.values.iter().map(|&x| x.max(0.0)).collect();
    let cutoff = SUPPORT_CUTOFF * lambda_max;
    let support_rank = lambdas.iter().filter(|&&x| x > cutoff).count();

    let v = &eig.vectors;
    let d = v.adjoint() * drho * v;
    let mut l = CMatrix::zeros(n, n);
    let mut kernel_leak = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let s = lambdas[i] + lambdas[j];
            if s > cutoff && s > 0.0 {
                l[(i, j)] = d[(i, j)] * (2.0 / s);
            } else {
                kernel_leak = kernel_leak.max(d[(i, j)].norm());
            }
        }
    }
    let scale = lambda_max.max(max_abs(drho));
    if kernel_leak > KERNEL_REJECT * scale {
        return Err(Error::InconsistentDerivative(kernel_leak));
    }
    let matrix = hermitian_part(&(v * l * v.adjoint()));
    Ok(Sld {
        matrix,
        support_rank,
        kernel_leak,
    })
}

/// `max |((rho L + L rho)/2 - d rho)_ij|` over eigenbasis pairs of `rho` that
/// touch its support.
pub fn sld_support_residual(rho: &CMatrix, drho: &CMatrix, sld: &CMatrix) -> Result<f64> {
    let eig = hermitian_eig(rho)?;
    let lambda_max = eig.max_value().max(0.0);
    let cutoff = SUPPORT_CUTOFF * lambda_max;
    let half = Complex64::new(0.5, 0.0);
    let residual = (rho * sld + sld * rho) * half - drho;
    let r = eig.vectors.adjoint() * residual * &eig.vectors;
    let n = rho.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if eig.values[i].max(0.0) + eig.values[j].max(0.0) > cutoff {
                worst = worst.max(r[(i, j)].norm());
            }
        }
    }
    Ok(worst)
}

/// Kronecker product `A (x) B`.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list of factors, leftmost first.
pub fn tensor_all<'a>(factors: impl IntoIterator<Item = &'a CMatrix>) -> CMatrix {
    factors
        .into_iter()
        .fold(CMatrix::identity(1, 1), |acc, f| acc.kronecker(f))
}

/// `1 (x) ... (x) op (x) ... (x) 1` with `op` on `site` of `n_sites` equal
/// subsystems of dimension `site_dim`.
pub fn embed_site(op: &CMatrix, site: usize, n_sites: usize, site_dim: usize) -> CMatrix {
    let left = identity(site_dim.pow(site as u32));
    let right = identity(site_dim.pow((n_sites - site - 1) as u32));
    left.kronecker(op).kronecker(&right)
}

/// Row-major strides for a list of subsystem dimensions.
fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Offsets into the full index for every multi-index over `sites`.
fn offsets(dims: &[usize], strides: &[usize], sites: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for &site in sites {
        let mut next = Vec::with_capacity(out.len() * dims[site]);
        for &base in &out {
            for k in 0..dims[site] {
                next.push(base + k * strides[site]);
            }
        }
        out = next;
    }
    out
}

/// Partial trace of `m` over the subsystems listed in `traced` (0-based).
///
/// Tracing every subsystem returns the 1x1 matrix `[Tr M]`.
pub fn partial_trace(m: &CMatrix, dims: &[usize], traced: &[usize]) -> Result<CMatrix> {
    let n = ensure_square(m)?;
    let total: usize = dims.iter().product();
    if total != n {
        return Err(Error::DimensionMismatch(format!(
            "partial_trace: subsystem dims {dims:?} multiply to {total}, matrix is {n}x{n}"
        )));
    }
    let mut is_traced = vec![false; dims.len()];
    for &t in traced {
        if t >= dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "partial_trace: subsystem {t} out of range for {} subsystems",
                dims.len()
            )));
        }
        is_traced[t] = true;
    }
    let st = strides(dims);
    let kept: Vec<usize> = (0..dims.len()).filter(|&i| !is_traced[i]).collect();
    let gone: Vec<usize> = (0..dims.len()).filter(|&i| is_traced[i]).collect();
    let kept_off = offsets(dims, &st, &kept);
    let gone_off = offsets(dims, &st, &gone);
    let k = kept_off.len();
    let mut out = CMatrix::zeros(k, k);
    for (r, &ro) in kept_off.iter().enumerate() {
        for (c, &co) in kept_off.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for &g in &gone_off {
                acc += m[(ro + g, co + g)];
            }
            out[(r, c)] = acc;
        }
    }
    Ok(out)
}

fn one_norm(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn ensure_exp_input(m: &CMatrix) -> Result<()> {
    ensure_square(m)?;
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("matrix_exp input".into()));
    }
    let norm = one_norm(m);
    if norm > EXP_NORM_LIMIT {
        return Err(Error::ExponentOverflow(norm));
    }
    Ok(())
}

/// Matrix exponential (Pade scaling and squaring).
pub fn matrix_exp(m: &CMatrix) -> Result<CMatrix> {
    ensure_exp_input(m)?;
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    Ok(m.exp())
}

/// `exp(A)` together with its Frechet derivative in direction `E`,
/// `d/ds exp(A + s E)|_{s=0}`, read off the exponential of the block matrix
/// `[[A, E], [0, A]]`.
pub fn exp_with_frechet(a: &CMatrix, e: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    ensure_same_shape(a, e, "exp_with_frechet")?;
    let n = ensure_square(a)?;
    let mut big = CMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((n, n), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).copy_from(e);
    let x = matrix_exp(&big)?;
    Ok((
        x.view((0, 0), (n, n)).into_owned(),
        x.view((0, n), (n, n)).into_owned(),
    ))
}

/// Trace-orthogonal basis of the real space of `dim x dim` Hermitian matrices.
///
/// Elements are normalised to `Tr[e_a e_b] = 2 delta_ab`. Order: scaled
/// identity, then for each pair `j < k` the symmetric element
/// `E_jk + E_kj` followed by the antisymmetric one `-i (E_jk - E_kj)`, then the
/// traceless diagonal ladder. For `dim = 2` this is `{I, sigma_x, sigma_y, sigma_z}`.
#[derive(Debug, Clone)]
pub struct HermitianBasis {
    pub dim: usize,
    pub elements: Vec<CMatrix>,
}

/// Trace inner product constant of [`HermitianBasis`].
pub const BASIS_NORM: f64 = 2.0;

pub fn hermitian_basis(dim: usize) -> Result<HermitianBasis> {
    if dim == 0 {
        return Err(Error::InvalidArgument("hermitian_basis needs dim >= 1".into()));
    }
    let mut elements = Vec::with_capacity(dim * dim);
    elements.push(identity(dim) * Complex64::new((BASIS_NORM / dim as f64).sqrt(), 0.0));
    for j in 0..dim {
        for k in (j + 1)..dim {
            let mut sym = CMatrix::zeros(dim, dim);
            sym[(j, k)] = Complex64::new(1.0, 0.0);
            sym[(k, j)] = Complex64::new(1.0, 0.0);
            elements.push(sym);
            let mut anti = CMatrix::zeros(dim, dim);
            anti[(j, k)] = Complex64::new(0.0, -1.0);
            anti[(k, j)] = Complex64::new(0.0, 1.0);
            elements.push(anti);
        }
    }
    for l in 1..dim {
        let scale = (BASIS_NORM / (l * (l + 1)) as f64).sqrt();
        let mut diag = CMatrix::zeros(dim, dim);
        for j in 0..l {
            diag[(j, j)] = Complex64::new(scale, 0.0);
        }
        diag[(l, l)] = Complex64::new(-(l as f64) * scale, 0.0);
        elements.push(diag);
    }
    Ok(HermitianBasis { dim, elements })
}

impl HermitianBasis {
    /// Real expansion coefficients `c_a = Tr[e_a M] / 2` of a Hermitian `M`.
    pub fn coefficients(&self, m: &CMatrix) -> Result<Vec<f64>> {
        if m.shape() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch(format!(
                "basis of dim {} cannot expand a {:?} matrix",
                self.dim,
                m.shape()
            )));
        }
        Ok(self
            .elements
            .iter()
            .map(|e| (e * m).trace().re / BASIS_NORM)
            .collect())
    }

    pub fn reconstruct(&self, coefficients: &[f64]) -> CMatrix {
        self.elements
            .iter()
            .zip(coefficients)
            .fold(CMatrix::zeros(self.dim, self.dim), |acc, (e, &c)| {
                acc + e * Complex64::new(c, 0.0)
            })
    }
}

/// Pauli matrices.
pub mod pauli {
    use crate::{c64, CMatrix};

    pub fn x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(1., 0.), c64(0., 0.)])
    }
    pub fn y() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(0., -1.), c64(0., 1.), c64(0., 0.)])
    }
    pub fn z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c64(1., 0.), c64(0., 0.), c64(0., 0.), c64(-1., 0.)])
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::c64;
    use approx::assert_abs_diff_eq;

    fn close(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    #[test]
    fn eig_of_diagonal_is_sorted_identity() {
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(3., 0.), c64(1., 0.)]));
        let e = hermitian_eig(&m).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!(close(&e.vectors.map(|z| c64(z.norm(), 0.0)), &identity(2)) < 1e-14);
    }

    #[test]
    fn eig_of_sigma_x() {
        let e = hermitian_eig(&pauli::x()).unwrap();
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], -1.0, epsilon = 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // eigenvectors (1, +-1)/sqrt(2) up to a phase
        let v0 = e.vectors.column(0);
        assert_abs_diff_eq!((v0[0] * v0[1].conj()).re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(v0[0].norm(), s, epsilon = 1e-14);
        let v1 = e.vectors.column(1);
        assert_abs_diff_eq!((v1[0] * v1[1].conj()).re, -0.5, epsilon = 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut r = rng(1);
        let h = random_hermitian(&mut r, 6);
        let e = hermitian_eig(&h).unwrap();
        assert!(close(&e.reconstruct(), &h) < 1e-10 * max_abs(&h));
        let vv = e.vectors.adjoint() * &e.vectors;
        assert!(close(&vv, &identity(6)) < 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(0., 0.), c64(0., 0.)]);
        match hermitian_eig(&m) {
            Err(Error::NotHermitian(d)) => assert_abs_diff_eq!(d, 1.0),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn sld_of_maximally_mixed_qubit() {
        let rho = identity(2) * c64(0.5, 0.0);
        let drho = pauli::z() * c64(0.5, 0.0);
        let sld = solve_sld(&rho, &drho).unwrap();
        assert!(close(&sld.matrix, &pauli::z()) < 1e-14);
        assert_eq!(sld.support_rank, 2);
    }

    /// Vectorised oracle: solve `(rho (x) 1 + 1 (x) rho^T)/2 vec(L) = vec(d rho)`
    /// by least squares (row-major vec: vec(A X B) = (A (x) B^T) vec X).
    fn sld_oracle(rho: &CMatrix, drho: &CMatrix) -> CMatrix {
        let n = rho.nrows();
        let op = (tensor(rho, &identity(n)) + tensor(&identity(n), &rho.transpose())) * c64(0.5, 0.0);
        let b = nalgebra::DVector::from_iterator(n * n, drho.transpose().iter().cloned());
        let svd = op.svd(true, true);
        let x = svd.solve(&b, 1e-12).unwrap();
        CMatrix::from_row_slice(n, n, x.as_slice())
    }

    #[test]
    fn sld_of_pure_state_with_off_diagonal_derivative() {
        let rho = CMatrix::from_row_slice(2, 2, &[c64(1., 0.), c64(0., 0.), c64(0., 0.), c64(0., 0.)]);
        let drho = pauli::x() * c64(0.5, 0.0);
        let sld = solve_sld(&rho, &drho).unwrap();
        // hand solution: L_01 = L_10 = 2 * (1/2) / (1 + 0) = 1, diagonal zero
        let expected = pauli::x();
        assert!(close(&sld.matrix, &expected) < 1e-14);
        assert_eq!(sld.support_rank, 1);
        // the minimum-norm oracle solution coincides because L_11 is free and zero
        let oracle = sld_oracle(&rho, &drho);
        assert!(close(&oracle, &expected) < 1e-10);
    }

    #[test]
    fn sld_of_static_family_is_zero() {
        let mut r = rng(2);
        let rho = random_density(&mut r, 3, 3);
        let sld = solve_sld(&rho, &CMatrix::zeros(3, 3)).unwrap();
        assert_eq!(max_abs(&sld.matrix), 0.0);
    }

    #[test]
    fn sld_matches_vectorised_oracle_full_rank() {
        let mut r = rng(3);
        for n in 2..6 {
            let rho = random_density(&mut r, n, n);
            let mut drho = random_hermitian(&mut r, n);
            let tr = drho.trace() / c64(n as f64, 0.0);
            drho -= identity(n) * tr;
            let sld = solve_sld(&rho, &drho).unwrap();
            let oracle = sld_oracle(&rho, &drho);
            assert!(close(&sld.matrix, &oracle) < 1e-8, "n = {n}");
            let half = c64(0.5, 0.0);
            let res = (&rho * &sld.matrix + &sld.matrix * &rho) * half - &drho;
            assert!(max_abs(&res) < 1e-9);
        }
    }

    #[test]
    fn sld_rejects_kernel_to_kernel_derivative() {
        let rho = CMatrix::from_row_slice(2, 2, &[c64(1., 0.), c64(0., 0.), c64(0., 0.), c64(0., 0.)]);
        let drho = CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(0., 0.), c64(0., 0.), c64(1., 0.)]);
        assert!(matches!(solve_sld(&rho, &drho), Err(Error::InconsistentDerivative(_))));
    }

    #[test]
    fn sld_rejects_non_positive_state() {
        let rho = pauli::z();
        assert!(matches!(
            solve_sld(&rho, &CMatrix::zeros(2, 2)),
            Err(Error::NotPositive(_))
        ));
    }

    #[test]
    fn tensor_examples() {
        assert!(close(&tensor(&identity(2), &identity(2)), &identity(4)) < 1e-15);
        let zz = tensor(&pauli::z(), &pauli::z());
        let d: Vec<f64> = zz.diagonal().iter().map(|z| z.re).collect();
        assert_eq!(d, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(max_abs(&(zz.clone() - CMatrix::from_diagonal(&zz.diagonal()))), 0.0);
        let mut r = rng(4);
        let a = random_matrix(&mut r, 3, 3);
        let b = random_matrix(&mut r, 2, 2);
        let lhs = trace(&tensor(&a, &b));
        let rhs = trace(&a) * trace(&b);
        assert!((lhs - rhs).norm() < 1e-13);
    }

    #[test]
    fn tensor_index_convention() {
        let mut r = rng(5);
        let a = random_matrix(&mut r, 2, 2);
        let b = random_matrix(&mut r, 3, 3);
        let ab = tensor(&a, &b);
        for ia in 0..2 {
            for ja in 0..2 {
                for ib in 0..3 {
                    for jb in 0..3 {
                        assert_eq!(ab[(ia * 3 + ib, ja * 3 + jb)], a[(ia, ja)] * b[(ib, jb)]);
                    }
                }
            }
        }
    }

    #[test]
    fn partial_trace_of_product() {
        let mut r = rng(6);
        let a = random_matrix(&mut r, 2, 2);
        let b = random_matrix(&mut r, 3, 3);
        let pt = partial_trace(&tensor(&a, &b), &[2, 3], &[1]).unwrap();
        assert!(close(&pt, &(&a * trace(&b))) < 1e-13);
        let all = partial_trace(&tensor(&a, &b), &[2, 3], &[0, 1]).unwrap();
        assert_eq!(all.shape(), (1, 1));
        assert!((all[(0, 0)] - trace(&a) * trace(&b)).norm() < 1e-13);
    }

    #[test]
    fn partial_trace_of_bell_state() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = crate::CVector::from_vec(vec![c64(s, 0.), c64(0., 0.), c64(0., 0.), c64(s, 0.)]);
        let rho = &psi * psi.adjoint();
        let reduced = partial_trace(&rho, &[2, 2], &[0]).unwrap();
        assert!(close(&reduced, &(identity(2) * c64(0.5, 0.0))) < 1e-15);
    }

    /// Brute-force oracle: explicit index summation over all basis labels.
    fn brute_partial_trace_3q(m: &CMatrix, traced: [bool; 3]) -> CMatrix {
        let kept: Vec<usize> = (0..3).filter(|&i| !traced[i]).collect();
        let k = 1 << kept.len();
        let mut out = CMatrix::zeros(k, k);
        for row in 0..8usize {
            for col in 0..8usize {
                let bits = |x: usize, i: usize| (x >> (2 - i)) & 1;
                if (0..3).any(|i| traced[i] && bits(row, i) != bits(col, i)) {
                    continue;
                }
                let kr = kept.iter().fold(0, |acc, &i| acc * 2 + bits(row, i));
                let kc = kept.iter().fold(0, |acc, &i| acc * 2 + bits(col, i));
                out[(kr, kc)] += m[(row, col)];
            }
        }
        out
    }

    #[test]
    fn partial_trace_matches_brute_force() {
        let mut r = rng(7);
        let m = random_matrix(&mut r, 8, 8);
        // subsystems 1 and 3 in one-based labels
        let pt = partial_trace(&m, &[2, 2, 2], &[0, 2]).unwrap();
        let oracle = brute_partial_trace_3q(&m, [true, false, true]);
        assert!(close(&pt, &oracle) < 1e-12);
        let pt2 = partial_trace(&m, &[2, 2, 2], &[1]).unwrap();
        assert!(close(&pt2, &brute_partial_trace_3q(&m, [false, true, false])) < 1e-12);
    }

    #[test]
    fn partial_trace_dimension_mismatch() {
        let m = identity(6);
        assert!(matches!(
            partial_trace(&m, &[2, 2], &[0]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            partial_trace(&m, &[2, 3], &[2]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn exp_examples() {
        assert!(close(&matrix_exp(&CMatrix::zeros(3, 3)).unwrap(), &identity(3)) < 1e-15);
        let arg = pauli::x() * c64(0.0, std::f64::consts::FRAC_PI_2);
        let u = matrix_exp(&arg).unwrap();
        assert!(close(&u, &(pauli::x() * c64(0.0, 1.0))) < 1e-14);
    }

    #[test]
    fn exp_matches_eigen_oracle_for_normal_matrices() {
        let mut r = rng(8);
        let h = random_hermitian(&mut r, 4);
        // normal but not Hermitian: (1 - 2i) H
        let m = &h * c64(1.0, -2.0);
        let e = hermitian_eig(&h).unwrap();
        let mut diag = CMatrix::zeros(4, 4);
        for (k, &l) in e.values.iter().enumerate() {
            diag[(k, k)] = (c64(1.0, -2.0) * l).exp();
        }
        let oracle = &e.vectors * diag * e.vectors.adjoint();
        assert!(close(&matrix_exp(&m).unwrap(), &oracle) < 1e-11);
    }

    #[test]
    fn exp_inverse_accuracy_up_to_norm_20() {
        let mut r = rng(9);
        for scale in [1.0, 5.0, 20.0] {
            let a = random_matrix(&mut r, 4, 4);
            let a = &a * c64(scale / one_norm(&a), 0.0);
            let p = matrix_exp(&a).unwrap() * matrix_exp(&(-&a)).unwrap();
            assert!(close(&p, &identity(4)) < 1e-9, "scale {scale}");
        }
    }

    #[test]
    fn exp_rejects_huge_norm() {
        let m = identity(2) * c64(1e4, 0.0);
        assert!(matches!(matrix_exp(&m), Err(Error::ExponentOverflow(_))));
    }

    #[test]
    fn frechet_matches_finite_difference() {
        let mut r = rng(10);
        let a = random_matrix(&mut r, 3, 3);
        let e = random_matrix(&mut r, 3, 3);
        let (ea, l) = exp_with_frechet(&a, &e).unwrap();
        assert!(close(&ea, &matrix_exp(&a).unwrap()) < 1e-12);
        let h = 1e-5;
        let fd = (matrix_exp(&(&a + &e * c64(h, 0.))).unwrap()
            - matrix_exp(&(&a - &e * c64(h, 0.))).unwrap())
            / c64(2.0 * h, 0.0);
        assert!(close(&l, &fd) < 1e-8);
    }

    #[test]
    fn basis_dim2_is_pauli() {
        let b = hermitian_basis(2).unwrap();
        assert_eq!(b.elements.len(), 4);
        assert!(close(&b.elements[0], &identity(2)) < 1e-15);
        assert!(close(&b.elements[1], &pauli::x()) < 1e-15);
        assert!(close(&b.elements[2], &pauli::y()) < 1e-15);
        assert!(close(&b.elements[3], &pauli::z()) < 1e-15);
    }

    #[test]
    fn basis_gram_matrix_is_diagonal() {
        for dim in 1..6 {
            let b = hermitian_basis(dim).unwrap();
            assert_eq!(b.elements.len(), dim * dim);
            for (i, ei) in b.elements.iter().enumerate() {
                assert!(is_hermitian(ei));
                for (j, ej) in b.elements.iter().enumerate() {
                    let g = (ei * ej).trace();
                    let want = if i == j { BASIS_NORM } else { 0.0 };
                    assert!((g - c64(want, 0.0)).norm() < 1e-13, "dim {dim} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn basis_round_trip() {
        let mut r = rng(11);
        for dim in 1..6 {
            let b = hermitian_basis(dim).unwrap();
            let h = random_hermitian(&mut r, dim);
            let c = b.coefficients(&h).unwrap();
            assert!(close(&b.reconstruct(&c), &h) < 1e-12);
        }
    }

    #[test]
    fn embed_site_places_operator() {
        let e = embed_site(&pauli::z(), 1, 3, 2);
        let want = tensor_all([&identity(2), &pauli::z(), &identity(2)]);
        assert!(close(&e, &want) < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng as _;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn sld_is_hermitian_and_solves_on_support(seed in any::<u64>(), n in 2usize..5, rank in 1usize..5) {
                let rank = rank.min(n);
                let mut r = rng(seed);
                let rho = random_density(&mut r, n, rank);
                // consistent derivative: d rho = (rho X + X rho)/2 for a Hermitian X
                let x = random_hermitian(&mut r, n);
                let drho = (&rho * &x + &x * &rho) * c64(0.5, 0.0);
                let sld = solve_sld(&rho, &drho).unwrap();
                prop_assert!(hermiticity_defect(&sld.matrix) < 1e-12);
                prop_assert!(sld_support_residual(&rho, &drho, &sld.matrix).unwrap() < 1e-9);
            }

            #[test]
            fn sld_gauge_freedom_leaves_products_invariant(seed in any::<u64>(), n in 3usize..6) {
                let mut r = rng(seed);
                let rank = n - 1;
                let rho = random_density(&mut r, n, rank);
                let x = random_hermitian(&mut r, n);
                let drho = (&rho * &x + &x * &rho) * c64(0.5, 0.0);
                let l1 = solve_sld(&rho, &drho).unwrap().matrix;
                // add Hermitian noise supported on the kernel of rho
                let e = hermitian_eig(&rho).unwrap();
                let k = e.vectors.column(n - 1).into_owned();
                let noise = (&k * k.adjoint()) * c64(r.random_range(-3.0..3.0), 0.0);
                let l2 = &l1 + noise;
                prop_assert!(max_abs(&(&l1 * &rho - &l2 * &rho)) < 1e-9);
                let j1 = (&rho * &l1 * &l1).trace().re;
                let j2 = (&rho * &l2 * &l2).trace().re;
                prop_assert!((j1 - j2).abs() < 1e-9);
            }

            #[test]
            fn partial_trace_preserves_trace(seed in any::<u64>(), mask in 0u8..8) {
                let mut r = rng(seed);
                let m = random_matrix(&mut r, 12, 12);
                let traced: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
                let pt = partial_trace(&m, &[2, 3, 2], &traced).unwrap();
                prop_assert!((trace(&pt) - trace(&m)).norm() < 1e-12);
            }

            #[test]
            fn tensor_is_associative(seed in any::<u64>()) {
                let mut r = rng(seed);
                let a = random_matrix(&mut r, 2, 2);
                let b = random_matrix(&mut r, 3, 2);
                let c = random_matrix(&mut r, 2, 3);
                let lhs = tensor(&tensor(&a, &b), &c);
                let rhs = tensor(&a, &tensor(&b, &c));
                prop_assert!(max_abs(&(lhs - rhs)) < 1e-14);
            }
        }
    }
}
