//! Minimal Naimark dilations and the convex components of POVMs and ensembles.
//!
//! For a POVM `M` with spectral decompositions `M_i = Σ_k λ_ik |v_ik⟩⟨v_ik|`
//! the isometry `J = Σ |e_ik⟩⟨d_ik|`, `d_ik = √λ_ik v_ik`, maps `𝓗` into
//! `𝓗_⊕ = ⊕_i 𝓗_i`. Components of `M` are in one-to-one correspondence
//! with positive block-diagonal `E = ⊕ E_i` satisfying `J*EJ = 𝟙`, through
//! `M1_i = J_i* E_i J_i`, and the largest admissible weight is `1/‖E‖`.

use nalgebra::{DMatrix, DVector};

use crate::devices::{Device, Ensemble, Povm};
use crate::error::{Error, Result};
use crate::linalg::{c, HermitianBlock, IsometryBlock, C64, PSD_TOL};
use crate::linmap::{hermitian_basis, hvec};

/// Eigenvalues at or below this are dropped when forming the dilation.
pub const RANK_FLOOR: f64 = 1e-9;

/// Singular values at or below `NULLSPACE_TOL * max(1, σ_max)` count as zero.
pub const NULLSPACE_TOL: f64 = 1e-8;

const ISOMETRY_TOL: f64 = 1e-10;
const NORMALIZATION_TOL: f64 = 1e-8;
const SUPPORT_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct NaimarkDilation {
    pub isometry: IsometryBlock,
    /// Projectors `P_i` onto the outcome blocks of `𝓗_⊕`.
    pub projections: Vec<HermitianBlock>,
    pub outcome_block_dims: Vec<usize>,
    /// Kept eigenvalues `λ_ik` per outcome.
    pub eigenvalues: Vec<Vec<f64>>,
    /// Matching unit eigenvectors as columns, `d × r_i`.
    pub eigenvectors: Vec<DMatrix<C64>>,
    /// The dilated POVM.
    pub effects: Vec<HermitianBlock>,
}

impl NaimarkDilation {
    pub fn dim(&self) -> usize {
        self.outcome_block_dims.iter().sum()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcome_block_dims.len()
    }

    fn offset(&self, i: usize) -> usize {
        self.outcome_block_dims[..i].iter().sum()
    }

    /// Rows of `J` belonging to outcome `i`, an `r_i × d` matrix.
    pub fn block(&self, i: usize) -> DMatrix<C64> {
        let r = self.outcome_block_dims[i];
        self.isometry.matrix().rows(self.offset(i), r).into_owned()
    }

    /// `Σ_i J_i* Δ_i J_i`.
    pub fn compress(&self, blocks: &[HermitianBlock]) -> HermitianBlock {
        let d = self.isometry.cols();
        let mut acc = HermitianBlock::zeros(d);
        for (i, b) in blocks.iter().enumerate() {
            let ji = self.block(i);
            acc = &acc + &b.conjugate_by(&ji.adjoint());
        }
        acc
    }
}

#[derive(Clone, Debug)]
pub struct ComponentCertificate {
    pub e_blocks: Vec<HermitianBlock>,
    pub max_weight: f64,
}

impl ComponentCertificate {
    /// `‖E‖ = max_i ‖E_i‖` for block-diagonal `E`.
    pub fn norm(&self) -> Result<f64> {
        self.e_blocks.iter().try_fold(0.0_f64, |m, e| Ok(m.max(e.operator_norm()?)))
    }
}

pub fn naimark_dilation(m: &Povm) -> Result<NaimarkDilation> {
    let v = Device::Povm(m.clone()).validate();
    if !v.is_empty() {
        return Err(Error::InvalidDevice(v));
    }
    let d = m.effects[0].dim();
    let mut rows: Vec<DVector<C64>> = Vec::new();
    let mut dims = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut eigenvectors = Vec::new();
    for e in &m.effects {
        let (vals, vecs) = e.eigh()?;
        let keep: Vec<usize> = (0..d).filter(|&k| vals[k] > RANK_FLOOR).collect();
        let mut ev = DMatrix::zeros(d, keep.len());
        for (col, &k) in keep.iter().enumerate() {
            let v = vecs.column(k).into_owned();
            rows.push(v.conjugate() * c(vals[k].sqrt()));
            ev.set_column(col, &v);
        }
        dims.push(keep.len());
        eigenvalues.push(keep.iter().map(|&k| vals[k]).collect());
        eigenvectors.push(ev);
    }
    let n = rows.len();
    let j = DMatrix::from_fn(n, d, |r, col| rows[r][col]);
    let isometry = IsometryBlock::new(j, ISOMETRY_TOL)?;
    let mut projections = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &r in &dims {
        let mut diag = vec![0.0; n];
        diag[off..off + r].iter_mut().for_each(|x| *x = 1.0);
        projections.push(HermitianBlock::from_real_diagonal(&diag));
        off += r;
    }
    Ok(NaimarkDilation {
        isometry,
        projections,
        outcome_block_dims: dims,
        eigenvalues,
        eigenvectors,
        effects: m.effects.clone(),
    })
}

fn check_certificate(dil: &NaimarkDilation, e: &[HermitianBlock]) -> Result<()> {
    if e.len() != dil.n_outcomes() {
        return Err(Error::DimensionMismatch { expected: dil.n_outcomes(), actual: e.len() });
    }
    for (i, (b, &r)) in e.iter().zip(&dil.outcome_block_dims).enumerate() {
        if b.dim() != r {
            return Err(Error::DimensionMismatch { expected: r, actual: b.dim() });
        }
        if r > 0 && b.min_eigenvalue()? < -PSD_TOL {
            return Err(Error::NotAComponent(format!("certificate block {i} is not positive")));
        }
    }
    let d = dil.isometry.cols();
    let res = dil.compress(e).max_abs_diff(&HermitianBlock::identity(d));
    if res > NORMALIZATION_TOL {
        return Err(Error::NotAComponent(format!("J*EJ deviates from the identity by {res:e}")));
    }
    Ok(())
}

fn norm_of(e: &[HermitianBlock]) -> Result<f64> {
    e.iter().filter(|b| b.dim() > 0).try_fold(0.0_f64, |m, b| Ok(m.max(b.operator_norm()?)))
}

/// `M = λ M1 + (1−λ) M2` with `M1_i = J_i* E_i J_i`; `M2` is absent for `λ = 1`.
pub fn component_from_e(dil: &NaimarkDilation, e: &[HermitianBlock], lambda: f64) -> Result<(Povm, Option<Povm>)> {
    check_certificate(dil, e)?;
    let max = 1.0 / norm_of(e)?;
    if !(lambda > 0.0) || lambda > max.min(1.0) * (1.0 + 1e-9) {
        return Err(Error::WeightTooLarge { lambda, max: max.min(1.0) });
    }
    let d = dil.isometry.cols();
    let m1: Vec<HermitianBlock> = (0..dil.n_outcomes())
        .map(|i| {
            if dil.outcome_block_dims[i] == 0 {
                HermitianBlock::zeros(d)
            } else {
                e[i].conjugate_by(&dil.block(i).adjoint())
            }
        })
        .collect();
    let m2 = if lambda < 1.0 {
        Some(Povm {
            effects: dil.effects.iter().zip(&m1).map(|(m, a)| (m - &a.scale(lambda)).scale(1.0 / (1.0 - lambda))).collect(),
        })
    } else {
        None
    };
    Ok((Povm { effects: m1 }, m2))
}

/// The unique certificate `E` with `J_i* E_i J_i = M1_i`.
pub fn certificate_for_component(dil: &NaimarkDilation, m1: &Povm) -> Result<ComponentCertificate> {
    let v = Device::Povm(m1.clone()).validate();
    if !v.is_empty() {
        return Err(Error::InvalidDevice(v));
    }
    if m1.effects.len() != dil.n_outcomes() {
        return Err(Error::DimensionMismatch { expected: dil.n_outcomes(), actual: m1.effects.len() });
    }
    let d = dil.isometry.cols();
    let mut blocks = Vec::with_capacity(m1.effects.len());
    for (i, a) in m1.effects.iter().enumerate() {
        let v = &dil.eigenvectors[i];
        let lam = &dil.eigenvalues[i];
        let proj = v * v.adjoint();
        let outside = DMatrix::<C64>::identity(d, d) - proj;
        let leak = (&outside * a.matrix()).norm();
        if leak > SUPPORT_TOL * (1.0 + a.frobenius_norm()) {
            return Err(Error::SupportViolation { index: i });
        }
        let r = lam.len();
        let inner = v.adjoint() * a.matrix() * v;
        let m = DMatrix::from_fn(r, r, |l, k| inner[(l, k)] / (lam[l] * lam[k]).sqrt());
        blocks.push(HermitianBlock::new(m)?);
    }
    check_certificate(dil, &blocks)?;
    let max_weight = (1.0 / norm_of(&blocks)?).min(1.0);
    Ok(ComponentCertificate { e_blocks: blocks, max_weight })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticTrivialWeight {
    pub weight: f64,
    pub distribution: Vec<f64>,
}

/// `1 − W = Σ_j λ_min(M_j)` with optimal `p(i) ∝ λ_min(M_i)`.
pub fn trivial_weight_analytic(m: &Povm) -> Result<AnalyticTrivialWeight> {
    let mins = m.effects.iter().map(|e| Ok(e.min_eigenvalue()?.max(0.0))).collect::<Result<Vec<f64>>>()?;
    let total: f64 = mins.iter().sum();
    let n = mins.len();
    let distribution = if total > 0.0 { mins.iter().map(|l| l / total).collect() } else { vec![1.0 / n as f64; n] };
    Ok(AnalyticTrivialWeight { weight: (1.0 - total).clamp(0.0, 1.0), distribution })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extremality {
    pub extreme: bool,
    pub nullspace_dim: usize,
}

/// Dimension of `{Δ = ⊕Δ_i Hermitian : Σ J_i*Δ_iJ_i = 0}`.
pub fn is_extreme(m: &Povm) -> Result<Extremality> {
    let dil = naimark_dilation(m)?;
    let d = dil.isometry.cols();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (i, &r) in dil.outcome_block_dims.iter().enumerate() {
        let ji = dil.block(i);
        for b in hermitian_basis(r) {
            cols.push(hvec(&b.conjugate_by(&ji.adjoint())));
        }
    }
    let n_params = cols.len();
    if n_params == 0 {
        return Ok(Extremality { extreme: true, nullspace_dim: 0 });
    }
    let a = DMatrix::from_columns(&cols);
    debug_assert_eq!(a.nrows(), d * d);
    let sv = a.svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > NULLSPACE_TOL * smax.max(1.0)).count();
    let nullspace_dim = n_params - rank;
    Ok(Extremality { extreme: nullspace_dim == 0, nullspace_dim })
}

/// Component operators `E_i = (p̃_i/p_i) ϱ_i^{−1/2} ϱ̃_i ϱ_i^{−1/2}` of `comp`
/// inside `e`, and the largest weight `min(1, 1/max_i ‖E_i‖)`.
pub fn ensemble_component_operators(e: &Ensemble, comp: &Ensemble) -> Result<(Vec<HermitianBlock>, f64)> {
    if e.elements.len() != comp.elements.len() {
        return Err(Error::DimensionMismatch { expected: e.elements.len(), actual: comp.elements.len() });
    }
    let total: f64 = comp.elements.iter().map(|(p, _)| p).sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotAComponent(format!("component probabilities sum to {total}")));
    }
    let mut blocks = Vec::with_capacity(e.elements.len());
    let mut norm: f64 = 0.0;
    for (i, ((p, rho), (pt, rt))) in e.elements.iter().zip(&comp.elements).enumerate() {
        if *pt <= 0.0 {
            blocks.push(HermitianBlock::zeros(rho.dim()));
            continue;
        }
        if *p <= 0.0 {
            return Err(Error::SupportViolation { index: i });
        }
        let supp = rho.support_projector()?;
        let leak = (&HermitianBlock::identity(rho.dim()) - &supp).matrix() * rt.matrix();
        if leak.norm() > SUPPORT_TOL * (1.0 + rt.frobenius_norm()) {
            return Err(Error::SupportViolation { index: i });
        }
        let isq = rho.pseudo_inv_sqrt()?;
        let ei = rt.conjugate_by(isq.matrix()).scale(pt / p);
        norm = norm.max(ei.operator_norm()?);
        blocks.push(ei);
    }
    let max_weight = if norm > 0.0 { (1.0 / norm).min(1.0) } else { 1.0 };
    Ok((blocks, max_weight))
}

/// Checks the purification picture for the ensemble operators: with
/// `ψ = Σ_i √p_i (ϱ_i^{1/2} ⊗ 𝟙)|Ω_i⟩` on `𝓗 ⊗ (⊕_i 𝓗)` and the ancilla
/// operator `E = ⊕_i E_iᵀ`, returns `(max_i ‖tr_anc ψ_i^E ψ_i^E* − p̃_i ϱ̃_i‖,
/// ‖E‖ − max_i ‖E_i‖, ⟨ψ|𝟙⊗E|ψ⟩)`.
pub fn ensemble_purification_check(e: &Ensemble, comp: &Ensemble, ops: &[HermitianBlock]) -> Result<(f64, f64, f64)> {
    let d = e.elements[0].1.dim();
    let n = e.elements.len();
    let anc = n * d;
    // Ancilla-side operator, block diagonal.
    let mut big = DMatrix::<C64>::zeros(anc, anc);
    for (i, op) in ops.iter().enumerate() {
        big.view_mut((i * d, i * d), (d, d)).copy_from(op.transpose().matrix());
    }
    let big = HermitianBlock::new(big)?;
    let sqrt_e = big.pseudo_sqrt()?;
    let mut psi = DVector::<C64>::zeros(d * anc);
    for (i, (p, rho)) in e.elements.iter().enumerate() {
        let s = rho.pseudo_sqrt()?;
        for a in 0..d {
            for row in 0..d {
                psi[row * anc + i * d + a] += s.get(row, a) * p.sqrt();
            }
        }
    }
    let lift = crate::linalg::kron_matrix(&DMatrix::identity(d, d), sqrt_e.matrix());
    let psi_e = &lift * &psi;
    let mut worst: f64 = 0.0;
    for (i, (pt, rt)) in comp.elements.iter().enumerate() {
        let mut red = DMatrix::<C64>::zeros(d, d);
        for r in 0..d {
            for s in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..d {
                    acc += psi_e[r * anc + i * d + a] * psi_e[s * anc + i * d + a].conj();
                }
                red[(r, s)] = acc;
            }
        }
        worst = worst.max((red - rt.scale(*pt).matrix()).norm());
    }
    let block_max = norm_of(ops)?;
    let norm_gap = (big.operator_norm()? - block_max).abs();
    let lifted = crate::linalg::kron_matrix(&DMatrix::identity(d, d), big.matrix());
    let expectation = (psi.adjoint() * lifted * &psi)[(0, 0)].re;
    Ok((worst, norm_gap, expectation))
}

/// Lower bound on `1 − W(e, trivial ensembles)` from the uniform trivial
/// component at `target`; zero when the target leaves some support.
pub fn trivial_component_weight_bound(e: &Ensemble, target: &HermitianBlock) -> Result<f64> {
    let n = e.elements.len();
    let comp = Ensemble { elements: vec![(1.0 / n as f64, target.clone()); n] };
    match ensemble_component_operators(e, &comp) {
        Ok((_, w)) => Ok(w.clamp(0.0, 1.0)),
        Err(Error::SupportViolation { .. }) => Ok(0.0),
        Err(err) => Err(err),
    }
}

/// Best bound over pure qubit targets on a `n_theta × n_phi` Bloch-sphere grid.
pub fn trivial_bound_grid_search(e: &Ensemble, n_theta: usize, n_phi: usize) -> Result<(f64, HermitianBlock)> {
    if e.elements[0].1.dim() != 2 {
        return Err(Error::Incompatible("grid search is defined for qubit ensembles".into()));
    }
    let mut best = (-1.0, HermitianBlock::identity(2).scale(0.5));
    for a in 0..n_theta {
        let theta = std::f64::consts::PI * (a as f64 + 0.5) / n_theta as f64;
        for b in 0..n_phi {
            let phi = 2.0 * std::f64::consts::PI * b as f64 / n_phi as f64;
            let psi = DVector::from_vec(vec![c((theta / 2.0).cos()), C64::from_polar((theta / 2.0).sin(), phi)]);
            let t = HermitianBlock::projector(&psi);
            let w = trivial_component_weight_bound(e, &t)?;
            if w > best.0 {
                best = (w, t);
            }
        }
    }
    Ok(best)
}
