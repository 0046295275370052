//! Hermiticity-preserving linear maps between operator spaces.
//!
//! Maps are stored as real matrices acting on coordinates in the orthonormal
//! Hermitian basis returned by [`hermitian_basis`], so the adjoint is the
//! transpose. The basis of `d×d` Hermitian matrices is ordered as the `d`
//! diagonal units followed, for each pair `j < k`, by
//! `(|j⟩⟨k| + |k⟩⟨j|)/√2` and `i(|j⟩⟨k| − |k⟩⟨j|)/√2`.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{kron, partial_trace, partial_transpose, HermitianBlock, Subsystem, C64};

fn pairs(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |j| (j + 1..d).map(move |k| (j, k)))
}

/// Coordinates `⟨E_k, X⟩` of a Hermitian matrix in the orthonormal basis.
pub fn hvec(x: &HermitianBlock) -> DVector<f64> {
    let d = x.dim();
    let mut v = DVector::zeros(d * d);
    for j in 0..d {
        v[j] = x.get(j, j).re;
    }
    for (n, (j, k)) in pairs(d).enumerate() {
        let z = x.get(j, k);
        v[d + 2 * n] = SQRT_2 * z.re;
        v[d + 2 * n + 1] = SQRT_2 * z.im;
    }
    v
}

/// Inverse of [`hvec`].
pub fn unhvec(v: &DVector<f64>, d: usize) -> HermitianBlock {
    debug_assert_eq!(v.len(), d * d);
    let mut m = DMatrix::<C64>::zeros(d, d);
    for j in 0..d {
        m[(j, j)] = C64::new(v[j], 0.0);
    }
    for (n, (j, k)) in pairs(d).enumerate() {
        let z = C64::new(v[d + 2 * n], v[d + 2 * n + 1]) / SQRT_2;
        m[(j, k)] = z;
        m[(k, j)] = z.conj();
    }
    HermitianBlock::symmetrized(m)
}

/// Orthonormal basis of the `d×d` Hermitian matrices.
pub fn hermitian_basis(d: usize) -> Vec<HermitianBlock> {
    (0..d * d)
        .map(|k| {
            let mut v = DVector::zeros(d * d);
            v[k] = 1.0;
            unhvec(&v, d)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum HermitianMap {
    /// `X ↦ c X`.
    Scaled { dim: usize, coeff: f64 },
    /// General map as a `out_dim² × in_dim²` matrix on basis coordinates.
    Dense { in_dim: usize, out_dim: usize, matrix: DMatrix<f64> },
}

impl HermitianMap {
    pub fn identity(dim: usize) -> Self {
        HermitianMap::Scaled { dim, coeff: 1.0 }
    }

    pub fn scaled(dim: usize, coeff: f64) -> Self {
        HermitianMap::Scaled { dim, coeff }
    }

    /// Tabulates a linear map by its action on the Hermitian basis.
    pub fn from_fn(in_dim: usize, out_dim: usize, f: impl Fn(&HermitianBlock) -> HermitianBlock) -> Self {
        let mut matrix = DMatrix::zeros(out_dim * out_dim, in_dim * in_dim);
        for (k, e) in hermitian_basis(in_dim).iter().enumerate() {
            let img = f(e);
            debug_assert_eq!(img.dim(), out_dim);
            matrix.set_column(k, &hvec(&img));
        }
        HermitianMap::Dense { in_dim, out_dim, matrix }
    }

    /// `[t] ↦ c·t·1_d` from a `1×1` block.
    pub fn scalar_to_identity(out_dim: usize, coeff: f64) -> Self {
        Self::from_fn(1, out_dim, |x| HermitianBlock::identity(out_dim).scale(coeff * x.trace()))
    }

    pub fn partial_transpose(dims: (usize, usize), on: Subsystem) -> Self {
        let n = dims.0 * dims.1;
        Self::from_fn(n, n, |x| partial_transpose(x, dims, on).expect("dimension fixed by construction"))
    }

    pub fn partial_trace(dims: (usize, usize), over: Subsystem) -> Self {
        let out = match over {
            Subsystem::First => dims.1,
            Subsystem::Second => dims.0,
        };
        Self::from_fn(dims.0 * dims.1, out, |x| partial_trace(x, dims, over).expect("dimension fixed by construction"))
    }

    /// `X ↦ A ⊗ X`.
    pub fn kron_left(a: &HermitianBlock, in_dim: usize) -> Self {
        Self::from_fn(in_dim, a.dim() * in_dim, |x| kron(a, x))
    }

    pub fn in_dim(&self) -> usize {
        match self {
            HermitianMap::Scaled { dim, .. } => *dim,
            HermitianMap::Dense { in_dim, .. } => *in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            HermitianMap::Scaled { dim, .. } => *dim,
            HermitianMap::Dense { out_dim, .. } => *out_dim,
        }
    }

    pub fn apply(&self, x: &HermitianBlock) -> Result<HermitianBlock> {
        if x.dim() != self.in_dim() {
            return Err(Error::DimensionMismatch { expected: self.in_dim(), actual: x.dim() });
        }
        Ok(match self {
            HermitianMap::Scaled { coeff, .. } => x.scale(*coeff),
            HermitianMap::Dense { out_dim, matrix, .. } => unhvec(&(matrix * hvec(x)), *out_dim),
        })
    }

    pub fn adjoint_apply(&self, y: &HermitianBlock) -> Result<HermitianBlock> {
        if y.dim() != self.out_dim() {
            return Err(Error::DimensionMismatch { expected: self.out_dim(), actual: y.dim() });
        }
        Ok(match self {
            HermitianMap::Scaled { coeff, .. } => y.scale(*coeff),
            HermitianMap::Dense { in_dim, matrix, .. } => unhvec(&(matrix.transpose() * hvec(y)), *in_dim),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        match self {
            HermitianMap::Scaled { dim, coeff } => HermitianMap::Scaled { dim: *dim, coeff: coeff * s },
            HermitianMap::Dense { in_dim, out_dim, matrix } => {
                HermitianMap::Dense { in_dim: *in_dim, out_dim: *out_dim, matrix: matrix * s }
            }
        }
    }
}
