//! Dense complex Hermitian linear algebra and the Choi machinery.
//!
//! Every device, witness and cone variable in this crate is ultimately a
//! [`HermitianBlock`]. Tensor products are ordered `H ⊗ K` with the first
//! factor as the most significant index, so the entry `((i,k),(j,l))` of an
//! operator on `H ⊗ K` lives at row `i * dK + k` and column `j * dK + l`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Maximum elementwise deviation from Hermiticity accepted at construction,
/// relative to the largest entry magnitude.
pub const HERMITICITY_TOL: f64 = 1e-10;

/// Eigenvalues at or below `KERNEL_CUTOFF * ‖h‖` are treated as kernel.
pub const KERNEL_CUTOFF: f64 = 1e-9;

/// Tolerance on the minimum eigenvalue for positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-9;

const EIGH_EPS: f64 = 1e-15;
const EIGH_MAX_ITER: usize = 10_000;

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Which tensor factor an operation acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    First,
    Second,
}

/// A dense complex square matrix stored exactly Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianBlock {
    m: DMatrix<C64>,
}

impl HermitianBlock {
    /// Validates Hermiticity within [`HERMITICITY_TOL`] and stores `(h + h*)/2`.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
        }
        let scale = m.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
        let n = m.nrows();
        for r in 0..n {
            for col in r..n {
                let dev = (m[(r, col)] - m[(col, r)].conj()).norm();
                if dev > HERMITICITY_TOL * scale {
                    return Err(Error::NotHermitian { row: r, col, deviation: dev });
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without the asymmetry check. For results of operations that
    /// are Hermitian in exact arithmetic.
    pub(crate) fn symmetrized(m: DMatrix<C64>) -> Self {
        let h = (&m + m.adjoint()) * c(0.5);
        Self { m: h }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = DMatrix::from_fn(n, n, |r, col| c(rows[r].get(col).copied().unwrap_or(f64::NAN)));
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotSquare { rows: n, cols: rows.first().map_or(0, |r| r.len()) });
        }
        Self::new(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { m: DMatrix::zeros(dim, dim) }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let v = DVector::from_iterator(diag.len(), diag.iter().map(|&x| c(x)));
        Self { m: DMatrix::from_diagonal(&v) }
    }

    /// The rank-one operator `|ψ⟩⟨ψ|`.
    pub fn projector(psi: &DVector<C64>) -> Self {
        Self::symmetrized(psi * psi.adjoint())
    }

    pub fn pauli_x() -> Self {
        Self::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
    }

    pub fn pauli_y() -> Self {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = C64::new(0.0, -1.0);
        m[(1, 0)] = C64::new(0.0, 1.0);
        Self { m }
    }

    pub fn pauli_z() -> Self {
        Self::from_real_diagonal(&[1.0, -1.0])
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.m[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m[(i, i)].re).sum()
    }

    /// Real inner product `tr(A B)`.
    pub fn inner(&self, other: &HermitianBlock) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.m.iter().zip(other.m.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { m: &self.m * c(s) }
    }

    /// Transpose in the computational basis, equal to the entrywise conjugate.
    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    /// `A h A*` for an arbitrary (possibly rectangular) `A`.
    pub fn conjugate_by(&self, a: &DMatrix<C64>) -> Self {
        Self::symmetrized(a * &self.m * a.adjoint())
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &HermitianBlock) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        self.m.iter().zip(other.m.iter()).fold(0.0, |acc, (a, b)| acc.max((a - b).norm()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    /// Eigendecomposition `h = V diag(λ) V*` with eigenvalues ascending.
    pub fn eigh(&self) -> Result<(DVector<f64>, DMatrix<C64>)> {
        let eig = SymmetricEigen::try_new(self.m.clone(), EIGH_EPS, EIGH_MAX_ITER).ok_or_else(|| {
            Error::NumericalFailure(format!("eigh did not converge (dim {})", self.dim()))
        })?;
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok((values, vectors))
    }

    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(self.eigh()?.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        let v = self.eigenvalues()?;
        Ok(v[v.len() - 1])
    }

    /// Largest eigenvalue modulus.
    pub fn operator_norm(&self) -> Result<f64> {
        let v = self.eigenvalues()?;
        Ok(v[0].abs().max(v[v.len() - 1].abs()))
    }

    /// `V f(λ) V*`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let (vals, vecs) = self.eigh()?;
        let d = DVector::from_iterator(vals.len(), vals.iter().map(|&l| c(f(l))));
        Ok(Self::symmetrized(&vecs * DMatrix::from_diagonal(&d) * vecs.adjoint()))
    }

    fn psd_spectrum(&self) -> Result<(DVector<f64>, DMatrix<C64>, f64)> {
        let (vals, vecs) = self.eigh()?;
        let norm = vals[0].abs().max(vals[vals.len() - 1].abs());
        if vals[0] < -PSD_TOL * norm.max(1.0) {
            return Err(Error::NegativeEigenvalue { value: vals[0] });
        }
        Ok((vals, vecs, KERNEL_CUTOFF * norm))
    }

    fn from_spectrum(vals: impl Iterator<Item = f64>, vecs: &DMatrix<C64>) -> Self {
        let d = DVector::from_iterator(vecs.ncols(), vals.map(c));
        Self::symmetrized(vecs * DMatrix::from_diagonal(&d) * vecs.adjoint())
    }

    /// Square root on the support, zero on the kernel.
    pub fn pseudo_sqrt(&self) -> Result<Self> {
        let (vals, vecs, cut) = self.psd_spectrum()?;
        Ok(Self::from_spectrum(vals.iter().map(|&l| if l > cut { l.sqrt() } else { 0.0 }), &vecs))
    }

    /// Inverse square root on the support, zero on the kernel.
    pub fn pseudo_inv_sqrt(&self) -> Result<Self> {
        let (vals, vecs, cut) = self.psd_spectrum()?;
        Ok(Self::from_spectrum(vals.iter().map(|&l| if l > cut { 1.0 / l.sqrt() } else { 0.0 }), &vecs))
    }

    /// Orthogonal projector onto the span of eigenvectors above the kernel cutoff.
    pub fn support_projector(&self) -> Result<Self> {
        let (vals, vecs) = self.eigh()?;
        let norm = vals[0].abs().max(vals[vals.len() - 1].abs());
        let cut = KERNEL_CUTOFF * norm;
        Ok(Self::from_spectrum(vals.iter().map(|&l| if l > cut { 1.0 } else { 0.0 }), &vecs))
    }

    pub fn is_psd(&self, tol: f64) -> Result<bool> {
        Ok(self.min_eigenvalue()? >= -tol)
    }
}

impl Add for &HermitianBlock {
    type Output = HermitianBlock;
    fn add(self, rhs: &HermitianBlock) -> HermitianBlock {
        HermitianBlock { m: &self.m + &rhs.m }
    }
}

impl Sub for &HermitianBlock {
    type Output = HermitianBlock;
    fn sub(self, rhs: &HermitianBlock) -> HermitianBlock {
        HermitianBlock { m: &self.m - &rhs.m }
    }
}

impl Neg for &HermitianBlock {
    type Output = HermitianBlock;
    fn neg(self) -> HermitianBlock {
        HermitianBlock { m: -&self.m }
    }
}

impl Mul<f64> for &HermitianBlock {
    type Output = HermitianBlock;
    fn mul(self, rhs: f64) -> HermitianBlock {
        self.scale(rhs)
    }
}

/// Sum of equally sized blocks; `None` for an empty slice.
pub fn sum_blocks<'a>(blocks: impl IntoIterator<Item = &'a HermitianBlock>) -> Option<HermitianBlock> {
    let mut it = blocks.into_iter();
    let first = it.next()?.clone();
    Some(it.fold(first, |acc, b| &acc + b))
}

/// A matrix `J` with `J* J = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsometryBlock {
    m: DMatrix<C64>,
}

impl IsometryBlock {
    pub fn new(m: DMatrix<C64>, tol: f64) -> Result<Self> {
        let residual = (m.adjoint() * &m - DMatrix::identity(m.ncols(), m.ncols()))
            .iter()
            .fold(0.0_f64, |acc, z| acc.max(z.norm()));
        if residual > tol {
            return Err(Error::NotIsometry { residual });
        }
        Ok(Self { m })
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }
}

pub fn kron_matrix(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

pub fn kron(a: &HermitianBlock, b: &HermitianBlock) -> HermitianBlock {
    HermitianBlock { m: a.m.kronecker(&b.m) }
}

fn check_bipartite(h: &HermitianBlock, dims: (usize, usize)) -> Result<()> {
    if h.dim() != dims.0 * dims.1 {
        return Err(Error::DimensionMismatch { expected: dims.0 * dims.1, actual: h.dim() });
    }
    Ok(())
}

/// Partial trace over the designated factor of `H ⊗ K` with `dims = (dH, dK)`.
pub fn partial_trace(h: &HermitianBlock, dims: (usize, usize), over: Subsystem) -> Result<HermitianBlock> {
    check_bipartite(h, dims)?;
    let (dh, dk) = dims;
    let m = &h.m;
    let out = match over {
        Subsystem::Second => DMatrix::from_fn(dh, dh, |i, j| (0..dk).map(|k| m[(i * dk + k, j * dk + k)]).sum()),
        Subsystem::First => DMatrix::from_fn(dk, dk, |k, l| (0..dh).map(|i| m[(i * dk + k, i * dk + l)]).sum()),
    };
    Ok(HermitianBlock::symmetrized(out))
}

/// Transpose on the designated factor in the computational basis.
pub fn partial_transpose(h: &HermitianBlock, dims: (usize, usize), on: Subsystem) -> Result<HermitianBlock> {
    check_bipartite(h, dims)?;
    let (dh, dk) = dims;
    let m = &h.m;
    let n = dh * dk;
    let out = DMatrix::from_fn(n, n, |r, col| {
        let (i, k) = (r / dk, r % dk);
        let (j, l) = (col / dk, col % dk);
        match on {
            Subsystem::Second => m[(i * dk + l, j * dk + k)],
            Subsystem::First => m[(j * dk + k, i * dk + l)],
        }
    });
    Ok(HermitianBlock { m: out })
}

/// Choi matrix `(id ⊗ Λ)|ψ⁺⟩⟨ψ⁺|` of the map with the given Kraus operators
/// (each `dK × dH`), with `|ψ⁺⟩ = d^{-1/2} Σ_i |ii⟩`.
pub fn choi_from_kraus(kraus: &[DMatrix<C64>]) -> Result<HermitianBlock> {
    let first = kraus.first().ok_or_else(|| Error::Incompatible("empty Kraus list".into()))?;
    let (dk, dh) = first.shape();
    let n = dh * dk;
    let mut j = DMatrix::<C64>::zeros(n, n);
    for k in kraus {
        if k.shape() != (dk, dh) {
            return Err(Error::DimensionMismatch { expected: dk * dh, actual: k.nrows() * k.ncols() });
        }
        let v = DVector::from_fn(n, |r, _| k[(r % dk, r / dk)]);
        j += &v * v.adjoint();
    }
    Ok(HermitianBlock::symmetrized(j * c(1.0 / dh as f64)))
}

/// `Σ_a K_a ρ K_a*`.
pub fn apply_kraus(kraus: &[DMatrix<C64>], rho: &HermitianBlock) -> HermitianBlock {
    let out = kraus.iter().fold(DMatrix::<C64>::zeros(kraus[0].nrows(), kraus[0].nrows()), |acc, k| {
        acc + k * rho.matrix() * k.adjoint()
    });
    HermitianBlock::symmetrized(out)
}

/// Recovers `Λ(ρ) = d tr_H[(ρᵀ ⊗ 1_K) J]` from a Choi matrix on `H ⊗ K`.
pub fn choi_invert(j: &HermitianBlock, dims: (usize, usize), rho: &HermitianBlock) -> Result<HermitianBlock> {
    check_bipartite(j, dims)?;
    if rho.dim() != dims.0 {
        return Err(Error::DimensionMismatch { expected: dims.0, actual: rho.dim() });
    }
    let (dh, dk) = dims;
    let lifted = rho.m.transpose().kronecker(&DMatrix::<C64>::identity(dk, dk));
    let prod = lifted * &j.m;
    let out = DMatrix::from_fn(dk, dk, |k, l| (0..dh).map(|i| prod[(i * dk + k, i * dk + l)]).sum::<C64>());
    Ok(HermitianBlock::symmetrized(out * c(dh as f64)))
}

/// Maximally entangled vector `d^{-1/2} Σ_i |ii⟩`.
pub fn max_entangled(d: usize) -> DVector<C64> {
    let s = 1.0 / (d as f64).sqrt();
    DVector::from_fn(d * d, |r, _| if r / d == r % d { c(s) } else { c(0.0) })
}
