//! Primal–dual interior-point solver for block-diagonal Hermitian PSD programs.
//!
//! A [`ConeProgram`] is posed in maximization form over Hermitian PSD blocks
//! `X_b`:
//!
//! ```text
//! maximize   Σ_b tr(C_b X_b)
//! subject to Σ_b tr(H_ib X_b) = r_i
//!            Σ_b Φ_kb(X_b) ≼ B_k
//! ```
//!
//! Each dominance constraint receives its own slack block, and its dual
//! variable `Y_k ≽ 0` is reported in [`SolveResult::dual_blocks`]. Complex
//! blocks are lowered to real symmetric blocks of twice the dimension.

mod ipm;
mod presolve;

use std::env;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{HermitianBlock, C64};
use crate::linmap::{hermitian_basis, hvec, HermitianMap};

use ipm::{RealProblem, RealSolution};
use presolve::Presolved;

pub type BlockId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub gap_tol: f64,
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub step_fraction: f64,
    /// Once optimal, iterations are continued towards tolerances scaled by
    /// this factor, for at most `polish_iterations` further steps.
    pub polish_factor: f64,
    pub polish_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { gap_tol: 1e-7, residual_tol: 1e-8, max_iterations: 200, step_fraction: 0.99, polish_factor: 1e-3, polish_iterations: 15 }
    }
}

impl SolverSettings {
    /// Defaults with the gap tolerance overridden by `CW_SOLVER_TOL` if set.
    pub fn from_env() -> Self {
        let mut s = Self::default();
        if let Some(tol) = env::var("CW_SOLVER_TOL").ok().and_then(|v| v.parse::<f64>().ok()) {
            if tol > 0.0 && tol.is_finite() {
                s.gap_tol = tol;
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
struct Equality {
    terms: Vec<(BlockId, HermitianBlock)>,
    rhs: f64,
}

#[derive(Clone, Debug)]
struct Dominance {
    terms: Vec<(BlockId, HermitianMap)>,
    bound: HermitianBlock,
}

#[derive(Clone, Debug, Default)]
pub struct ConeProgram {
    blocks: Vec<usize>,
    objective: Vec<Option<HermitianBlock>>,
    equalities: Vec<Equality>,
    dominances: Vec<Dominance>,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Primal objective `Σ tr(C_b X_b)`.
    pub value: f64,
    /// Dual objective.
    pub dual_value: f64,
    pub primal_blocks: Vec<HermitianBlock>,
    /// One witness `Y_k` per dominance constraint; an improving ray when
    /// the program is infeasible.
    pub dual_blocks: Vec<HermitianBlock>,
    /// Dual slack `Z_b` per variable block.
    pub dual_slacks: Vec<HermitianBlock>,
    /// `B_k − Σ Φ_kb(X_b)` per dominance constraint.
    pub slack_blocks: Vec<HermitianBlock>,
    /// Multipliers of the scalar equality rows in insertion order.
    pub equality_multipliers: Vec<f64>,
    /// Relative duality gap.
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn into_optimal(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver(self.status))
        }
    }
}

/// `[[Re h, −Im h], [Im h, Re h]]`.
pub fn embed_complex(h: &HermitianBlock) -> DMatrix<f64> {
    let d = h.dim();
    DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        let z = h.get(i % d, j % d);
        match (i < d, j < d) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Hermitian matrix whose embedding is closest to the real symmetric `x`.
fn extract(x: &DMatrix<f64>) -> HermitianBlock {
    let d = x.nrows() / 2;
    let m = DMatrix::from_fn(d, d, |i, j| {
        C64::new((x[(i, j)] + x[(i + d, j + d)]) / 2.0, (x[(i + d, j)] - x[(i, j + d)]) / 2.0)
    });
    HermitianBlock::symmetrized(m)
}

impl ConeProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, dim: usize) -> BlockId {
        self.blocks.push(dim);
        self.objective.push(None);
        self.blocks.len() - 1
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.blocks
    }

    pub fn n_dominances(&self) -> usize {
        self.dominances.len()
    }

    fn check_block(&self, b: BlockId, dim: usize) -> Result<()> {
        match self.blocks.get(b) {
            None => Err(Error::Incompatible(format!("unknown block {b}"))),
            Some(&n) if n != dim => Err(Error::DimensionMismatch { expected: n, actual: dim }),
            _ => Ok(()),
        }
    }

    /// Adds `tr(C X_b)` to the objective.
    pub fn add_objective(&mut self, b: BlockId, c: HermitianBlock) -> Result<()> {
        self.check_block(b, c.dim())?;
        let slot = &mut self.objective[b];
        *slot = Some(match slot.take() {
            Some(old) => &old + &c,
            None => c,
        });
        Ok(())
    }

    pub fn add_equality(&mut self, terms: Vec<(BlockId, HermitianBlock)>, rhs: f64) -> Result<()> {
        for (b, h) in &terms {
            self.check_block(*b, h.dim())?;
        }
        self.equalities.push(Equality { terms, rhs });
        Ok(())
    }

    /// `Σ Φ_b(X_b) = rhs`, expanded into one scalar row per basis element.
    pub fn add_matrix_equality(&mut self, terms: Vec<(BlockId, HermitianMap)>, rhs: &HermitianBlock) -> Result<()> {
        let out = rhs.dim();
        for (b, m) in &terms {
            self.check_block(*b, m.in_dim())?;
            if m.out_dim() != out {
                return Err(Error::DimensionMismatch { expected: out, actual: m.out_dim() });
            }
        }
        let r = hvec(rhs);
        for (k, e) in hermitian_basis(out).iter().enumerate() {
            let row = terms.iter().map(|(b, m)| Ok((*b, m.adjoint_apply(e)?))).collect::<Result<Vec<_>>>()?;
            self.equalities.push(Equality { terms: row, rhs: r[k] });
        }
        Ok(())
    }

    /// `Σ Φ_b(X_b) ≼ bound`; returns the index of its witness.
    pub fn add_dominance(&mut self, terms: Vec<(BlockId, HermitianMap)>, bound: HermitianBlock) -> Result<usize> {
        for (b, m) in &terms {
            self.check_block(*b, m.in_dim())?;
            if m.out_dim() != bound.dim() {
                return Err(Error::DimensionMismatch { expected: bound.dim(), actual: m.out_dim() });
            }
        }
        self.dominances.push(Dominance { terms, bound });
        Ok(self.dominances.len() - 1)
    }

    pub fn solve(&self) -> Result<SolveResult> {
        self.solve_with(&SolverSettings::from_env())
    }

    pub fn solve_with(&self, settings: &SolverSettings) -> Result<SolveResult> {
        if self.blocks.is_empty() {
            return Err(Error::Incompatible("cone program has no blocks".into()));
        }
        let lowered = self.lower()?;
        let n_rows = lowered.rows.len();
        let n_eq = n_rows - self.dominances.iter().map(|d| d.bound.dim().pow(2)).sum::<usize>();
        let c = lowered.c.clone();
        let b_orig = lowered.b.clone();

        let sol = match presolve::presolve(lowered) {
            Presolved::Inconsistent { ray } => {
                let y = -ray;
                return Ok(self.infeasible_result(&y, n_eq));
            }
            Presolved::Reduced { problem, kept, norms } => {
                let sol = ipm::solve(&problem, settings);
                let y = DVector::from_iterator(
                    n_rows,
                    (0..n_rows).map(|i| kept[i].map_or(0.0, |j| -sol.y[j] / norms[i])),
                );
                (sol, y)
            }
        };
        let (real, y) = sol;
        if real.status == SolveStatus::PrimalInfeasible {
            return Ok(self.infeasible_result(&y, n_eq));
        }
        Ok(self.postsolve(real, y, &c, &b_orig, n_eq))
    }

    fn lower(&self) -> Result<RealProblem> {
        let nb = self.blocks.len();
        let mut dims: Vec<usize> = self.blocks.iter().map(|d| 2 * d).collect();
        dims.extend(self.dominances.iter().map(|d| 2 * d.bound.dim()));
        let c = dims
            .iter()
            .enumerate()
            .map(|(k, &n)| match self.objective.get(k).and_then(|o| o.as_ref()) {
                Some(cb) => embed_complex(cb) * -0.5,
                None => DMatrix::zeros(n, n),
            })
            .collect();

        let mut rows = Vec::new();
        let mut b = Vec::new();
        for eq in &self.equalities {
            rows.push(merge(eq.terms.iter().map(|(k, h)| (*k, embed_complex(h) * 0.5))));
            b.push(eq.rhs);
        }
        for (k, dom) in self.dominances.iter().enumerate() {
            let slack = nb + k;
            let rhs = hvec(&dom.bound);
            for (r, e) in hermitian_basis(dom.bound.dim()).iter().enumerate() {
                let mut terms = Vec::with_capacity(dom.terms.len() + 1);
                for (blk, map) in &dom.terms {
                    terms.push((*blk, embed_complex(&map.adjoint_apply(e)?) * 0.5));
                }
                terms.push((slack, embed_complex(e) * 0.5));
                rows.push(merge(terms.into_iter()));
                b.push(rhs[r]);
            }
        }
        Ok(RealProblem { dims, c, rows, b: DVector::from_vec(b) })
    }

    fn witnesses(&self, y: &DVector<f64>, n_eq: usize) -> Vec<HermitianBlock> {
        let mut offset = n_eq;
        self.dominances
            .iter()
            .map(|d| {
                let n = d.bound.dim();
                let basis = hermitian_basis(n);
                let mut acc = HermitianBlock::zeros(n);
                for (r, e) in basis.iter().enumerate() {
                    acc = &acc + &e.scale(y[offset + r]);
                }
                offset += n * n;
                acc
            })
            .collect()
    }

    fn infeasible_result(&self, y: &DVector<f64>, n_eq: usize) -> SolveResult {
        let b: f64 = self.equalities.iter().map(|e| e.rhs).zip(y.iter()).map(|(r, v)| r * v).sum::<f64>()
            + self
                .dominances
                .iter()
                .zip(self.witnesses(y, n_eq))
                .map(|(d, w)| d.bound.inner(&w))
                .sum::<f64>();
        SolveResult {
            status: SolveStatus::PrimalInfeasible,
            value: f64::NAN,
            dual_value: b,
            primal_blocks: self.blocks.iter().map(|&n| HermitianBlock::zeros(n)).collect(),
            dual_blocks: self.witnesses(y, n_eq),
            dual_slacks: self.blocks.iter().map(|&n| HermitianBlock::zeros(n)).collect(),
            slack_blocks: self.dominances.iter().map(|d| HermitianBlock::zeros(d.bound.dim())).collect(),
            equality_multipliers: y.iter().take(n_eq).copied().collect(),
            gap: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            iterations: 0,
        }
    }

    fn postsolve(&self, real: RealSolution, y: DVector<f64>, c: &[DMatrix<f64>], b: &DVector<f64>, n_eq: usize) -> SolveResult {
        let nb = self.blocks.len();
        let primal_blocks: Vec<HermitianBlock> = real.x[..nb].iter().map(extract).collect();
        let slack_blocks: Vec<HermitianBlock> = real.x[nb..].iter().map(extract).collect();
        let dual_slacks: Vec<HermitianBlock> = real.z[..nb].iter().map(|z| extract(z).scale(2.0)).collect();
        let dual_blocks: Vec<HermitianBlock> = if real.status == SolveStatus::Optimal {
            real.z[nb..].iter().map(|z| extract(z).scale(2.0)).collect()
        } else {
            self.witnesses(&y, n_eq)
        };
        let value = -c.iter().zip(&real.x).map(|(ci, xi)| ci.dot(xi)).sum::<f64>();
        let dual_value = b.dot(&y);
        SolveResult {
            status: real.status,
            value,
            dual_value,
            primal_blocks,
            dual_blocks,
            dual_slacks,
            slack_blocks,
            equality_multipliers: y.iter().take(n_eq).copied().collect(),
            gap: real.gap,
            primal_residual: real.primal_residual,
            dual_residual: real.dual_residual,
            iterations: real.iterations,
        }
    }
}

fn merge(terms: impl Iterator<Item = (usize, DMatrix<f64>)>) -> Vec<(usize, DMatrix<f64>)> {
    let mut out: Vec<(usize, DMatrix<f64>)> = Vec::new();
    for (k, m) in terms {
        match out.iter_mut().find(|(j, _)| *j == k) {
            Some((_, acc)) => *acc += m,
            None => out.push((k, m)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::random_state;
    use crate::linalg::c;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dominance_program(bound: HermitianBlock, obj: HermitianBlock) -> ConeProgram {
        let mut p = ConeProgram::new();
        let x = p.add_block(bound.dim());
        p.add_objective(x, obj).unwrap();
        p.add_dominance(vec![(x, HermitianMap::identity(bound.dim()))], bound).unwrap();
        p
    }

    fn lambda_min_program(h: &HermitianBlock) -> ConeProgram {
        // maximize t − s with (t − s)·1 ≼ h, t, s ≽ 0.
        let d = h.dim();
        let mut p = ConeProgram::new();
        let t = p.add_block(1);
        let s = p.add_block(1);
        p.add_objective(t, HermitianBlock::identity(1)).unwrap();
        p.add_objective(s, HermitianBlock::identity(1).scale(-1.0)).unwrap();
        p.add_dominance(
            vec![(t, HermitianMap::scalar_to_identity(d, 1.0)), (s, HermitianMap::scalar_to_identity(d, -1.0))],
            h.clone(),
        )
        .unwrap();
        p
    }

    fn random_hermitian(d: usize, seed: u64) -> HermitianBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_state(d, &mut rng);
        let b = random_state(d, &mut rng);
        (&a - &b).scale(3.0)
    }

    #[test]
    fn embedding_examples() {
        let h = HermitianBlock::from_real_rows(&[&[1.0, 2.0], &[2.0, -1.0]]).unwrap();
        let e = embed_complex(&h);
        assert_eq!(e.view((0, 0), (2, 2)), e.view((2, 2), (2, 2)));
        assert!(e.view((0, 2), (2, 2)).iter().all(|v| *v == 0.0));

        let ey = embed_complex(&HermitianBlock::pauli_y());
        let mut spec: Vec<f64> = ey.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        spec.sort_by(f64::total_cmp);
        for (s, w) in spec.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((s - w).abs() < 1e-12);
        }
        assert_eq!(embed_complex(&HermitianBlock::identity(3)), DMatrix::identity(6, 6));
    }

    #[test]
    fn embedding_doubles_inner_products() {
        let a = random_hermitian(3, 1);
        let b = random_hermitian(3, 2);
        assert!((embed_complex(&a).dot(&embed_complex(&b)) - 2.0 * a.inner(&b)).abs() < 1e-12);
        assert!(extract(&embed_complex(&a)).max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn dominance_saturates() {
        let r = dominance_program(HermitianBlock::from_real_diagonal(&[2.0, 3.0]), HermitianBlock::identity(2))
            .solve()
            .unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value - 5.0).abs() < 1e-7);
        assert!(r.primal_blocks[0].max_abs_diff(&HermitianBlock::from_real_diagonal(&[2.0, 3.0])) < 1e-6);
    }

    #[test]
    fn positive_part_of_sigma_z() {
        let r = dominance_program(HermitianBlock::identity(2), HermitianBlock::pauli_z()).solve().unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value - 1.0).abs() < 1e-7);
        assert!(r.primal_blocks[0].max_abs_diff(&HermitianBlock::from_real_diagonal(&[1.0, 0.0])) < 1e-6);
        // Witness is the projector onto the positive part.
        assert!(r.dual_blocks[0].max_abs_diff(&HermitianBlock::from_real_diagonal(&[1.0, 0.0])) < 1e-6);
    }

    #[test]
    fn lambda_min_matches_eigh() {
        for (seed, d) in [(3, 2), (4, 3), (5, 4)] {
            let h = random_hermitian(d, seed);
            let r = lambda_min_program(&h).solve().unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            assert!((r.value - h.min_eigenvalue().unwrap()).abs() < 1e-7, "d={d}");
        }
    }

    #[test]
    fn complex_objective_is_respected() {
        // max tr(σ_y X) over X ≼ 1 is 1, attained at the +1 eigenprojector of σ_y.
        let r = dominance_program(HermitianBlock::identity(2), HermitianBlock::pauli_y()).solve().unwrap();
        assert!((r.value - 1.0).abs() < 1e-7);
        let psi = DVector::from_vec(vec![c(1.0), C64::new(0.0, 1.0)]) * c(1.0 / 2f64.sqrt());
        assert!(r.primal_blocks[0].max_abs_diff(&HermitianBlock::projector(&psi)) < 1e-6);
    }

    #[test]
    fn infeasible_program_returns_ray() {
        // X ≼ -1 with X ≽ 0 has no solution.
        let mut p = ConeProgram::new();
        let x = p.add_block(2);
        p.add_dominance(vec![(x, HermitianMap::identity(2))], HermitianBlock::identity(2).scale(-1.0)).unwrap();
        let r = p.solve().unwrap();
        assert_eq!(r.status, SolveStatus::PrimalInfeasible);
        let y = &r.dual_blocks[0];
        assert!(y.min_eigenvalue().unwrap() > -1e-9);
        assert!(y.inner(&HermitianBlock::identity(2).scale(-1.0)) < 0.0);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = ConeProgram::new();
        let x = p.add_block(1);
        p.add_equality(vec![(x, HermitianBlock::identity(1))], 1.0).unwrap();
        p.add_equality(vec![(x, HermitianBlock::identity(1).scale(2.0))], 3.0).unwrap();
        assert_eq!(p.solve().unwrap().status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut p = ConeProgram::new();
        let x = p.add_block(2);
        p.add_objective(x, HermitianBlock::pauli_z()).unwrap();
        p.add_equality(vec![(x, HermitianBlock::identity(2))], 1.0).unwrap();
        p.add_equality(vec![(x, HermitianBlock::identity(2).scale(2.0))], 2.0).unwrap();
        let r = p.solve().unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_mismatched_terms() {
        let mut p = ConeProgram::new();
        let x = p.add_block(2);
        assert!(p.add_objective(x, HermitianBlock::identity(3)).is_err());
        assert!(ConeProgram::new().solve().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn weak_duality_and_complementarity(seed in 0u64..10_000, d in 2usize..4) {
            let h = random_hermitian(d, seed);
            let r = lambda_min_program(&h).solve().unwrap();
            prop_assert_eq!(r.status, SolveStatus::Optimal);
            let scale = 1.0 + r.value.abs();
            prop_assert!(r.dual_value - r.value >= -1e-7 * scale);
            prop_assert!(r.slack_blocks[0].inner(&r.dual_blocks[0]).abs() <= 1e-7 * scale);
            for (x, z) in r.primal_blocks.iter().zip(&r.dual_slacks) {
                prop_assert!(x.inner(z).abs() <= 1e-7 * scale);
            }
            for blk in r.primal_blocks.iter().chain(&r.dual_blocks) {
                prop_assert!(blk.min_eigenvalue().unwrap() >= -1e-9);
            }
        }

        #[test]
        fn scaling_objective_scales_value(seed in 0u64..10_000, s in 0.1f64..10.0) {
            // Objective with spectrum bounded away from zero so the argmax is well conditioned.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = crate::devices::ginibre(3, 3, &mut rng).qr().q();
            let diag = HermitianBlock::from_real_diagonal(&[-1.5, 0.5, 1.0]);
            let obj = diag.conjugate_by(&u);
            let bound = HermitianBlock::identity(3).scale(2.0);
            let r1 = dominance_program(bound.clone(), obj.clone()).solve().unwrap();
            let r2 = dominance_program(bound, obj.scale(s)).solve().unwrap();
            prop_assert!((r2.value - s * r1.value).abs() <= 1e-7 * (1.0 + r2.value.abs()));
            let diff = r1.primal_blocks[0].max_abs_diff(&r2.primal_blocks[0]);
            prop_assert!(diff <= 1e-7, "argmax moved by {diff:e}");
        }
    }
}
