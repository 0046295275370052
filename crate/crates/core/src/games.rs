//! Exclusion games built from weight witnesses, their payoffs, canonical
//! forms, and the ratio identities linking payoffs to the convex weight.
//!
//! Every game is a linear functional on devices of a fixed shape. Rewards
//! are stored per device block `k = (i, x)`:
//!
//! * state-like devices: one POVM per setting, `rewards[k]` is `1 × |povm_x|`
//!   and `P = Σ_{k,j} ω_kj tr[D_k N_{j|x}]`;
//! * measurement-like devices: one subnormalized ensemble per setting,
//!   `rewards[k]` is `1 × |ens_x|` and `P = Σ_{k,j} ω_kj p_{j|x} tr[ϱ_{j|x} D_k]`;
//! * channels and instruments: one input ensemble and one output POVM,
//!   `rewards[k]` is `n_in × n_out` and `P = Σ_{k,a,b} ω_kab p_a tr[Λ_k(ϱ_a) N_b]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::devices::{maximally_mixed, random_povm, random_probabilities, random_state, Device, DeviceClass, DeviceShape, Povm};
use crate::error::{Error, Result};
use crate::free_sets::FreeSetSpec;
use crate::linalg::{c, choi_invert, kron, sum_blocks, HermitianBlock, Subsystem, C64, KERNEL_CUTOFF, PSD_TOL};
use crate::linmap::{hvec, HermitianMap};
use crate::solver::{ConeProgram, SolverSettings};
use crate::weight::WeightResult;

/// Payoff ranges at or below this have no canonical form.
pub const DEGENERATE_RANGE: f64 = 1e-9;
/// Tolerance on `num/den = 1 − W`.
pub const RATIO_TOL: f64 = 1e-5;
/// Tolerance on the payoff of the outside component and on the lower bound.
pub const PAYOFF_TOL: f64 = 1e-6;
/// Relative residual allowed when expanding a witness in a product frame.
pub const DECOMPOSITION_TOL: f64 = 1e-8;
/// Number of random games checked by [`verify_ratio`].
pub const RANDOM_GAMES: usize = 20;

#[derive(Clone, Debug)]
pub struct ExclusionGame {
    pub shape: DeviceShape,
    /// `(p, ϱ)` pairs; per setting for measurement-like devices, a single
    /// input ensemble for channels and instruments.
    pub ensembles: Vec<Vec<(f64, HermitianBlock)>>,
    /// Per setting for state-like devices, a single output POVM for channels
    /// and instruments.
    pub povms: Vec<Vec<HermitianBlock>>,
    pub rewards: Vec<DMatrix<f64>>,
    pub canonical: bool,
}

impl ExclusionGame {
    pub fn class(&self) -> DeviceClass {
        self.shape.class
    }

    /// Checks that ensembles, POVMs and rewards fit the shape.
    pub fn check(&self) -> Result<()> {
        let s = &self.shape;
        let bad = |msg: String| Err(Error::Incompatible(msg));
        if self.rewards.len() != s.n_blocks() {
            return Err(Error::DimensionMismatch { expected: s.n_blocks(), actual: self.rewards.len() });
        }
        if self.rewards.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return bad("reward tensor has non-finite entries".into());
        }
        let (in_dim, out_dim) = match s.class {
            c if c.is_transformation() => s.dims.ok_or_else(|| Error::Incompatible("transformation shape without dims".into()))?,
            _ => (s.dim, s.dim),
        };
        let check_states = |list: &[(f64, HermitianBlock)], d: usize| -> Result<()> {
            for (p, rho) in list {
                if rho.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, actual: rho.dim() });
                }
                if !p.is_finite() {
                    return Err(Error::Incompatible("non-finite ensemble weight".into()));
                }
            }
            Ok(())
        };
        let check_povm = |list: &[HermitianBlock], d: usize| -> Result<()> {
            match list.iter().find(|e| e.dim() != d) {
                Some(e) => Err(Error::DimensionMismatch { expected: d, actual: e.dim() }),
                None => Ok(()),
            }
        };
        for (k, (_, x)) in s.labels().into_iter().enumerate() {
            let w = &self.rewards[k];
            let want = match s.class {
                c if c.is_state_like() => {
                    let povm = self.povms.get(x).ok_or_else(|| Error::Incompatible(format!("missing POVM for setting {x}")))?;
                    check_povm(povm, s.dim)?;
                    (1, povm.len())
                }
                c if c.is_measurement_like() => {
                    let ens = self.ensembles.get(x).ok_or_else(|| Error::Incompatible(format!("missing ensemble for setting {x}")))?;
                    check_states(ens, s.dim)?;
                    (1, ens.len())
                }
                _ => {
                    if self.ensembles.len() != 1 || self.povms.len() != 1 {
                        return bad("transformation games need one ensemble and one POVM".into());
                    }
                    check_states(&self.ensembles[0], in_dim)?;
                    check_povm(&self.povms[0], out_dim)?;
                    (self.ensembles[0].len(), self.povms[0].len())
                }
            };
            if w.shape() != want {
                return bad(format!("reward block {k} has shape {:?}, expected {want:?}", w.shape()));
            }
        }
        Ok(())
    }

    /// Operators `G_k` with `payoff(D) = Σ_k ⟨G_k, D_k⟩`.
    pub fn game_operators(&self) -> Result<Vec<HermitianBlock>> {
        self.check()?;
        let s = &self.shape;
        let zero = HermitianBlock::zeros(s.dim);
        let mut out = Vec::with_capacity(s.n_blocks());
        for (k, (_, x)) in s.labels().into_iter().enumerate() {
            let w = &self.rewards[k];
            let g = match s.class {
                c if c.is_state_like() => {
                    self.povms[x].iter().enumerate().fold(zero.clone(), |acc, (j, n)| &acc + &n.scale(w[(0, j)]))
                }
                c if c.is_measurement_like() => self.ensembles[x]
                    .iter()
                    .enumerate()
                    .fold(zero.clone(), |acc, (j, (p, rho))| &acc + &rho.scale(w[(0, j)] * p)),
                _ => {
                    let dh = s.dims.map(|d| d.0).unwrap_or(1) as f64;
                    let mut acc = zero.clone();
                    for (a, (p, rho)) in self.ensembles[0].iter().enumerate() {
                        let rt = rho.transpose();
                        for (b, n) in self.povms[0].iter().enumerate() {
                            if w[(a, b)] != 0.0 {
                                acc = &acc + &kron(&rt, n).scale(dh * p * w[(a, b)]);
                            }
                        }
                    }
                    acc
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Payoff change per unit shift of every reward on valid devices.
    pub fn unit_shift(&self) -> f64 {
        match self.shape.class {
            c if c.is_state_like() => self.shape.normalization(),
            c if c.is_measurement_like() => self.ensembles.iter().flatten().map(|(p, _)| p).sum(),
            _ => self.shape.n_settings as f64 * self.ensembles[0].iter().map(|(p, _)| p).sum::<f64>(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut g = self.clone();
        g.rewards.iter_mut().for_each(|w| *w *= s);
        g.canonical = false;
        g
    }

    /// `P(D)`, evaluated from the device action.
    pub fn payoff(&self, d: &Device) -> Result<f64> {
        payoff(self, d)
    }
}

pub fn payoff(g: &ExclusionGame, d: &Device) -> Result<f64> {
    g.check()?;
    let shape = d.shape();
    if shape != g.shape {
        return Err(Error::Incompatible(format!("device shape {shape:?} differs from game shape {:?}", g.shape)));
    }
    let blocks = d.blocks();
    let mut total = 0.0;
    for (k, (_, x)) in shape.labels().into_iter().enumerate() {
        let w = &g.rewards[k];
        let dk = &blocks[k];
        match shape.class {
            c if c.is_state_like() => {
                for (j, n) in g.povms[x].iter().enumerate() {
                    total += w[(0, j)] * dk.inner(n);
                }
            }
            c if c.is_measurement_like() => {
                for (j, (p, rho)) in g.ensembles[x].iter().enumerate() {
                    total += w[(0, j)] * p * rho.inner(dk);
                }
            }
            _ => {
                let dims = shape.dims.ok_or_else(|| Error::Incompatible("transformation without dims".into()))?;
                for (a, (p, rho)) in g.ensembles[0].iter().enumerate() {
                    let out = choi_invert(dk, dims, rho)?;
                    for (b, n) in g.povms[0].iter().enumerate() {
                        total += w[(a, b)] * p * out.inner(n);
                    }
                }
            }
        }
    }
    Ok(total)
}

/// `{S^{-1/2} Y_i S^{-1/2}}` with `S = Σ Y_i`.
pub fn exclusion_povm_filter(ys: &[HermitianBlock]) -> Result<Povm> {
    let s = sum_blocks(ys).ok_or_else(|| Error::Incompatible("empty witness".into()))?;
    let vals = s.eigenvalues()?;
    let top = vals.max().max(0.0);
    let low = vals.min();
    if low <= KERNEL_CUTOFF * top.max(1.0) {
        return Err(Error::NumericalFailure(format!("witness sum is singular (smallest eigenvalue {low:e})")));
    }
    let f = s.pseudo_inv_sqrt()?;
    Ok(Povm { effects: ys.iter().map(|y| y.conjugate_by(f.matrix())).collect() })
}

fn pauli_eigenstates() -> Vec<DVector<C64>> {
    let s = 1.0 / 2f64.sqrt();
    let i = C64::new(0.0, s);
    vec![
        DVector::from_vec(vec![c(1.0), c(0.0)]),
        DVector::from_vec(vec![c(0.0), c(1.0)]),
        DVector::from_vec(vec![c(s), c(s)]),
        DVector::from_vec(vec![c(s), c(-s)]),
        DVector::from_vec(vec![c(s), i]),
        DVector::from_vec(vec![c(s), -i]),
    ]
}

/// Informationally complete set of pure states on `C^d`: products of Pauli
/// eigenstates when `d` is a power of two, otherwise `|k⟩`, `(|k⟩+|l⟩)/√2`
/// and `(|k⟩+i|l⟩)/√2`.
pub fn frame_states(d: usize) -> Vec<HermitianBlock> {
    if d.is_power_of_two() {
        let mut vecs = vec![DVector::from_element(1, c(1.0))];
        for _ in 0..d.trailing_zeros() {
            vecs = vecs.iter().flat_map(|v| pauli_eigenstates().into_iter().map(move |e| v.kronecker(&e))).collect();
        }
        return vecs.iter().map(HermitianBlock::projector).collect();
    }
    let s = 1.0 / 2f64.sqrt();
    let mut out: Vec<HermitianBlock> = (0..d).map(|k| HermitianBlock::projector(&basis(d, k, c(1.0), None))).collect();
    for k in 0..d {
        for l in k + 1..d {
            out.push(HermitianBlock::projector(&basis(d, k, c(s), Some((l, c(s))))));
            out.push(HermitianBlock::projector(&basis(d, k, c(s), Some((l, C64::new(0.0, s))))));
        }
    }
    out
}

fn basis(d: usize, k: usize, a: C64, other: Option<(usize, C64)>) -> DVector<C64> {
    let mut v = DVector::zeros(d);
    v[k] = a;
    if let Some((l, b)) = other {
        v[l] = b;
    }
    v
}

/// Informationally complete POVM on `C^d` built from [`frame_states`].
pub fn frame_povm(d: usize) -> Result<Vec<HermitianBlock>> {
    let states = frame_states(d);
    if d.is_power_of_two() {
        let s = 1.0 / 3f64.powi(d.trailing_zeros() as i32);
        return Ok(states.iter().map(|p| p.scale(s)).collect());
    }
    Ok(exclusion_povm_filter(&states)?.effects)
}

fn delta_row(n: usize, i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(1, n, |_, j| if j == i { 1.0 } else { 0.0 })
}

/// Game whose payoff is proportional to `Σ_k ⟨D_k, Y_k⟩`.
pub fn game_from_witness(witness: &[HermitianBlock], shape: &DeviceShape) -> Result<ExclusionGame> {
    if witness.len() != shape.n_blocks() {
        return Err(Error::DimensionMismatch { expected: shape.n_blocks(), actual: witness.len() });
    }
    let mut ys = Vec::with_capacity(witness.len());
    for y in witness {
        if y.dim() != shape.dim {
            return Err(Error::DimensionMismatch { expected: shape.dim, actual: y.dim() });
        }
        let low = y.min_eigenvalue()?;
        if low < -PSD_TOL {
            return Err(Error::NegativeEigenvalue { value: low });
        }
        ys.push(y.map_spectrum(|l| l.max(0.0))?);
    }
    let labels = shape.labels();
    let n = shape.n_outcomes;
    let game = match shape.class {
        c if c.is_state_like() => {
            let sums: Vec<HermitianBlock> =
                (0..shape.n_settings).map(|x| sum_blocks(&ys[x * n..(x + 1) * n]).unwrap()).collect();
            let scale = sums.iter().map(|s| s.operator_norm()).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
            if scale <= 0.0 {
                return Err(Error::GameNormalization { den: 0.0, weight: f64::NAN });
            }
            let id = HermitianBlock::identity(shape.dim);
            let povms = (0..shape.n_settings)
                .map(|x| {
                    let mut effects: Vec<HermitianBlock> = ys[x * n..(x + 1) * n].iter().map(|y| y.scale(1.0 / scale)).collect();
                    effects.push((&id - &sums[x].scale(1.0 / scale)).map_spectrum(|l| l.max(0.0)).unwrap_or_else(|_| id.scale(0.0)));
                    effects
                })
                .collect();
            let rewards = labels.iter().map(|&(i, _)| delta_row(n + 1, i)).collect();
            ExclusionGame { shape: *shape, ensembles: vec![], povms, rewards, canonical: false }
        }
        c if c.is_measurement_like() => {
            let total: f64 = ys.iter().map(|y| y.trace()).sum();
            if total <= 0.0 {
                return Err(Error::GameNormalization { den: 0.0, weight: f64::NAN });
            }
            let mixed = maximally_mixed(shape.dim);
            let ensembles = (0..shape.n_settings)
                .map(|x| {
                    ys[x * n..(x + 1) * n]
                        .iter()
                        .map(|y| {
                            let t = y.trace();
                            if t > 0.0 {
                                (t / total, y.scale(1.0 / t))
                            } else {
                                (0.0, mixed.clone())
                            }
                        })
                        .collect()
                })
                .collect();
            let rewards = labels.iter().map(|&(i, _)| delta_row(n, i)).collect();
            ExclusionGame { shape: *shape, ensembles, povms: vec![], rewards, canonical: false }
        }
        _ => {
            let dims = shape.dims.ok_or_else(|| Error::Incompatible("transformation shape without dims".into()))?;
            let inputs = frame_states(dims.0);
            let p = 1.0 / inputs.len() as f64;
            let povm = frame_povm(dims.1)?;
            let ensemble: Vec<(f64, HermitianBlock)> = inputs.into_iter().map(|r| (p, r)).collect();
            let rewards = decompose_in_frame(&ys, &ensemble, &povm, dims.0)?;
            ExclusionGame { shape: *shape, ensembles: vec![ensemble], povms: vec![povm], rewards, canonical: false }
        }
    };
    game.check()?;
    Ok(game)
}

/// Minimal-norm `ω` with `Y_k = dH Σ_ab ω_kab p_a ϱ_aᵀ ⊗ N_b`.
fn decompose_in_frame(
    ys: &[HermitianBlock],
    ensemble: &[(f64, HermitianBlock)],
    povm: &[HermitianBlock],
    dh: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let (na, nb) = (ensemble.len(), povm.len());
    let mut cols = Vec::with_capacity(na * nb);
    for (p, rho) in ensemble {
        let rt = rho.transpose();
        for n in povm {
            cols.push(hvec(&kron(&rt, n).scale(dh as f64 * p)));
        }
    }
    let a = DMatrix::from_columns(&cols);
    let svd = a.clone().svd(true, true);
    let mut out = Vec::with_capacity(ys.len());
    for y in ys {
        let target = hvec(y);
        let w = svd.solve(&target, 1e-12).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        let residual = (&a * &w - &target).norm();
        if residual > DECOMPOSITION_TOL * target.norm().max(1.0) {
            return Err(Error::WitnessDecomposition { residual });
        }
        out.push(DMatrix::from_fn(na, nb, |r, s| w[r * nb + s]));
    }
    Ok(out)
}

/// Blocks `D_k` ranging over all valid devices of `shape`.
fn class_program(shape: &DeviceShape) -> Result<(ConeProgram, Vec<usize>)> {
    let mut p = ConeProgram::new();
    let d = shape.dim;
    let ids: Vec<usize> = (0..shape.n_blocks()).map(|_| p.add_block(d)).collect();
    let n = shape.n_outcomes;
    let id = HermitianBlock::identity(d);
    match shape.class {
        DeviceClass::State | DeviceClass::Ensemble => {
            p.add_equality(ids.iter().map(|&b| (b, id.clone())).collect(), 1.0)?;
        }
        DeviceClass::StateAssemblage => {
            let rho = p.add_block(d);
            p.add_equality(vec![(rho, id.clone())], 1.0)?;
            for x in 0..shape.n_settings {
                let mut terms: Vec<(usize, HermitianMap)> = ids[x * n..(x + 1) * n].iter().map(|&b| (b, HermitianMap::identity(d))).collect();
                terms.push((rho, HermitianMap::scaled(d, -1.0)));
                p.add_matrix_equality(terms, &HermitianBlock::zeros(d))?;
            }
        }
        DeviceClass::Povm | DeviceClass::MeasurementAssemblage => {
            for x in 0..shape.n_settings {
                let terms = ids[x * n..(x + 1) * n].iter().map(|&b| (b, HermitianMap::identity(d))).collect();
                p.add_matrix_equality(terms, &id)?;
            }
        }
        DeviceClass::Channel | DeviceClass::InstrumentSet => {
            let dims = shape.dims.ok_or_else(|| Error::Incompatible("transformation shape without dims".into()))?;
            let marginal = HermitianBlock::identity(dims.0).scale(1.0 / dims.0 as f64);
            for x in 0..shape.n_settings {
                let terms =
                    ids[x * n..(x + 1) * n].iter().map(|&b| (b, HermitianMap::partial_trace(dims, Subsystem::Second))).collect();
                p.add_matrix_equality(terms, &marginal)?;
            }
        }
    }
    Ok((p, ids))
}

fn optimize_class(shape: &DeviceShape, ops: &[HermitianBlock], sign: f64, settings: &SolverSettings) -> Result<f64> {
    let (mut p, ids) = class_program(shape)?;
    for (b, g) in ids.iter().zip(ops) {
        p.add_objective(*b, g.scale(sign))?;
    }
    Ok(sign * p.solve_with(settings)?.into_optimal()?.value)
}

/// `(min, max)` of the payoff over every valid device of the game's shape.
pub fn class_payoff_range(g: &ExclusionGame) -> Result<(f64, f64)> {
    let ops = g.game_operators()?;
    let settings = SolverSettings::from_env();
    Ok((optimize_class(&g.shape, &ops, -1.0, &settings)?, optimize_class(&g.shape, &ops, 1.0, &settings)?))
}

/// Shifts and rescales the rewards so the class-wide payoff spans `[0, 1]`.
pub fn canonicalize(g: &ExclusionGame) -> Result<ExclusionGame> {
    let (lo, hi) = class_payoff_range(g)?;
    let range = hi - lo;
    if range <= DEGENERATE_RANGE {
        return Err(Error::DegenerateGame { range });
    }
    let shift = lo / g.unit_shift();
    let mut out = g.clone();
    for w in out.rewards.iter_mut() {
        w.apply(|v| *v = (*v - shift) / range);
    }
    out.canonical = true;
    Ok(out)
}

/// Minimum payoff over the normalized free set.
pub fn free_minimum(g: &ExclusionGame, f: &FreeSetSpec) -> Result<f64> {
    free_minimum_with(g, f, &SolverSettings::from_env())
}

pub fn free_minimum_with(g: &ExclusionGame, f: &FreeSetSpec, settings: &SolverSettings) -> Result<f64> {
    if g.shape != f.shape {
        return Err(Error::Incompatible("game and free set have different shapes".into()));
    }
    let ops = g.game_operators()?;
    let bundle = f.cone_constraints()?;
    let mut p = ConeProgram::new();
    let ids = bundle.install(&mut p)?;
    let id = HermitianBlock::identity(f.shape.dim);
    let mut trace_rows: Vec<Option<HermitianBlock>> = vec![None; ids.len()];
    for (k, g_k) in ops.iter().enumerate() {
        for (b, m) in &bundle.images[k] {
            p.add_objective(ids[*b], m.adjoint_apply(g_k)?.scale(-1.0))?;
            let t = m.adjoint_apply(&id)?;
            trace_rows[*b] = Some(match trace_rows[*b].take() {
                Some(old) => &old + &t,
                None => t,
            });
        }
    }
    let terms = trace_rows.into_iter().enumerate().filter_map(|(b, t)| t.map(|t| (ids[b], t))).collect();
    p.add_equality(terms, f.shape.normalization())?;
    Ok(-p.solve_with(settings)?.into_optimal()?.value)
}

/// Uniformly random game with positive rewards.
pub fn random_game(shape: &DeviceShape, rng: &mut impl Rng) -> Result<ExclusionGame> {
    let n = shape.n_outcomes;
    let blocks = shape.n_blocks();
    let game = match shape.class {
        c if c.is_state_like() => {
            let povms = (0..shape.n_settings).map(|_| random_povm(shape.dim, n, rng)).collect();
            let rewards = (0..blocks).map(|_| DMatrix::from_fn(1, n, |_, _| rng.random::<f64>())).collect();
            ExclusionGame { shape: *shape, ensembles: vec![], povms, rewards, canonical: false }
        }
        c if c.is_measurement_like() => {
            let probs = random_probabilities(blocks, rng);
            let ensembles = (0..shape.n_settings)
                .map(|x| (0..n).map(|j| (probs[x * n + j], random_state(shape.dim, rng))).collect())
                .collect();
            let rewards = (0..blocks).map(|_| DMatrix::from_fn(1, n, |_, _| rng.random::<f64>())).collect();
            ExclusionGame { shape: *shape, ensembles, povms: vec![], rewards, canonical: false }
        }
        _ => {
            let (dh, dk) = shape.dims.ok_or_else(|| Error::Incompatible("transformation shape without dims".into()))?;
            let probs = random_probabilities(dh, rng);
            let ensemble = probs.into_iter().map(|p| (p, random_state(dh, rng))).collect();
            let povm = random_povm(dk, dk, rng);
            let rewards = (0..blocks).map(|_| DMatrix::from_fn(dh, dk, |_, _| rng.random::<f64>())).collect();
            ExclusionGame { shape: *shape, ensembles: vec![ensemble], povms: vec![povm], rewards, canonical: false }
        }
    };
    game.check()?;
    Ok(game)
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioReport {
    pub weight: f64,
    pub free_set: String,
    pub relaxed: bool,
    /// Payoff of the device in the witness game.
    pub numerator: f64,
    /// Minimum payoff over the free set in the witness game.
    pub denominator: f64,
    pub ratio: f64,
    pub ratio_ok: bool,
    pub outside_payoff: Option<f64>,
    pub random_games: usize,
    pub lower_bound_violations: usize,
    /// `min_g [P(D) − (1−W) min_F P]` over the random games.
    pub worst_lower_bound_slack: f64,
    pub pass: bool,
}

/// `(payoff(d), min_F payoff)` for an arbitrary game.
pub fn ratio_for_game(d: &Device, f: &FreeSetSpec, g: &ExclusionGame) -> Result<(f64, f64)> {
    Ok((payoff(g, d)?, free_minimum(g, f)?))
}

pub fn verify_ratio(d: &Device, f: &FreeSetSpec, r: &WeightResult) -> Result<RatioReport> {
    verify_ratio_seeded(d, f, r, 0)
}

pub fn verify_ratio_seeded(d: &Device, f: &FreeSetSpec, r: &WeightResult, seed: u64) -> Result<RatioReport> {
    let shape = d.shape();
    if shape != f.shape {
        return Err(Error::Incompatible("device and free set have different shapes".into()));
    }
    let game = game_from_witness(&r.witness_blocks(), &shape)?;
    let (num, den) = ratio_for_game(d, f, &game)?;
    let expected = 1.0 - r.weight;
    let (ratio, ratio_ok) = if den > DEGENERATE_RANGE {
        let q = num / den;
        (q, (q - expected).abs() <= RATIO_TOL)
    } else if r.weight < 1.0 {
        return Err(Error::GameNormalization { den, weight: r.weight });
    } else {
        (0.0, num <= RATIO_TOL)
    };
    let outside_payoff = r.outside_component.as_ref().map(|o| payoff(&game, o)).transpose()?;
    let outside_ok = outside_payoff.is_none_or(|p| p <= PAYOFF_TOL);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..RANDOM_GAMES {
        let g = random_game(&shape, &mut rng)?;
        let (p, m) = ratio_for_game(d, f, &g)?;
        let slack = p - expected * m;
        worst = worst.min(slack);
        if slack < -PAYOFF_TOL {
            violations += 1;
        }
    }
    Ok(RatioReport {
        weight: r.weight,
        free_set: r.free_set.clone(),
        relaxed: r.relaxed,
        numerator: num,
        denominator: den,
        ratio,
        ratio_ok,
        outside_payoff,
        random_games: RANDOM_GAMES,
        lower_bound_violations: violations,
        worst_lower_bound_slack: worst,
        pass: ratio_ok && outside_ok && violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{basis_projector, noisy_mix, random_device, ChannelChoi, MeasurementAssemblage};
    use crate::free_sets::FreeSetKind;
    use crate::weight::compute_weight;
    use proptest::prelude::*;

    fn channel_game(povm: Vec<HermitianBlock>, rewards: DMatrix<f64>) -> ExclusionGame {
        ExclusionGame {
            shape: DeviceShape::channel((2, 2)),
            ensembles: vec![vec![(0.5, basis_projector(2, 0)), (0.5, basis_projector(2, 1))]],
            povms: vec![povm],
            rewards: vec![rewards],
            canonical: false,
        }
    }

    fn noisy_z(eta: f64) -> Device {
        let z = Device::Povm(Povm::sharp(&HermitianBlock::pauli_z()));
        noisy_mix(&z, eta, &Device::Povm(Povm::trivial(&[0.5, 0.5], 2))).unwrap()
    }

    fn all_shapes() -> Vec<DeviceShape> {
        vec![
            DeviceShape::state(2),
            DeviceShape::ensemble(2, 3),
            DeviceShape::state_assemblage(2, 2, 2),
            DeviceShape::povm(3, 2),
            DeviceShape::measurement_assemblage(2, 2, 2),
            DeviceShape::channel((2, 3)),
            DeviceShape::instrument_set((2, 2), 2, 2),
        ]
    }

    #[test]
    fn payoff_examples() {
        let id = Device::Channel(ChannelChoi::identity(2));
        let sharp = vec![basis_projector(2, 0), basis_projector(2, 1)];
        let delta = DMatrix::identity(2, 2);
        let anti = DMatrix::from_element(2, 2, 1.0) - &delta;
        assert!((payoff(&channel_game(sharp.clone(), delta.clone()), &id).unwrap() - 1.0).abs() < 1e-12);
        assert!(payoff(&channel_game(sharp, anti), &id).unwrap().abs() < 1e-12);
        let triv = Povm::trivial(&[0.5, 0.5], 2).effects;
        assert!((payoff(&channel_game(triv, delta), &id).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn operators_match_direct_payoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (s, shape) in all_shapes().into_iter().enumerate() {
            let g = random_game(&shape, &mut rng).unwrap();
            let ops = g.game_operators().unwrap();
            for seed in 0..3 {
                let d = random_device(&shape, 100 * s as u64 + seed).unwrap();
                let via_ops: f64 = d.blocks().iter().zip(&ops).map(|(a, b)| a.inner(b)).sum();
                assert!((via_ops - payoff(&g, &d).unwrap()).abs() < 1e-10, "{shape:?}");
            }
        }
    }

    #[test]
    fn unit_shift_matches_constant_game() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (s, shape) in all_shapes().into_iter().enumerate() {
            let mut g = random_game(&shape, &mut rng).unwrap();
            g.rewards.iter_mut().for_each(|w| w.fill(1.0));
            let d = random_device(&shape, s as u64).unwrap();
            assert!((payoff(&g, &d).unwrap() - g.unit_shift()).abs() < 1e-10, "{shape:?}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = random_game(&DeviceShape::povm(2, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(payoff(&g, &noisy_z(0.2)).is_ok());
        let other = random_device(&DeviceShape::povm(2, 3), 0).unwrap();
        assert!(payoff(&g, &other).is_err());
    }

    #[test]
    fn filter_examples() {
        let m = Povm::trivial(&[0.25, 0.75], 2).effects;
        let out = exclusion_povm_filter(&m).unwrap();
        for (a, b) in out.effects.iter().zip(&m) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        let doubled: Vec<_> = m.iter().map(|e| e.scale(2.0)).collect();
        for (a, b) in exclusion_povm_filter(&doubled).unwrap().effects.iter().zip(&m) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        let ys = [
            HermitianBlock::from_real_diagonal(&[2.0, 0.0]),
            HermitianBlock::from_real_diagonal(&[0.0, 1.0]),
            HermitianBlock::from_real_diagonal(&[0.0, 1.0]),
        ];
        let out = exclusion_povm_filter(&ys).unwrap();
        let want = [[1.0, 0.0], [0.0, 0.5], [0.0, 0.5]];
        for (a, w) in out.effects.iter().zip(want) {
            assert!(a.max_abs_diff(&HermitianBlock::from_real_diagonal(&w)) < 1e-12);
        }
        assert!(exclusion_povm_filter(&[basis_projector(2, 0)]).is_err());
    }

    #[test]
    fn frames_are_complete() {
        for d in [2, 3, 4] {
            let povm = frame_povm(d).unwrap();
            let s = sum_blocks(&povm).unwrap();
            assert!(s.max_abs_diff(&HermitianBlock::identity(d)) < 1e-10);
            let cols: Vec<_> = frame_states(d).iter().map(hvec).collect();
            let rank = DMatrix::from_columns(&cols).rank(1e-9);
            assert_eq!(rank, d * d);
        }
    }

    #[test]
    fn uniform_witness_gives_trivial_povm() {
        let shape = DeviceShape::ensemble(2, 3);
        let y = vec![HermitianBlock::identity(2).scale(1.0 / 3.0); 3];
        let g = game_from_witness(&y, &shape).unwrap();
        assert_eq!(g.povms[0].len(), 4);
        for e in &g.povms[0][..3] {
            assert!(e.max_abs_diff(&HermitianBlock::identity(2).scale(1.0 / 3.0)) < 1e-12);
        }
        assert!(g.povms[0][3].frobenius_norm() < 1e-12);
    }

    #[test]
    fn constant_channel_witness() {
        let shape = DeviceShape::channel((2, 2));
        let g = game_from_witness(&[HermitianBlock::identity(4).scale(0.25)], &shape).unwrap();
        let w = &g.rewards[0];
        let first = w[(0, 0)];
        assert!(w.iter().all(|v| (v - first).abs() < 1e-10));
        let a = payoff(&g, &random_device(&shape, 1).unwrap()).unwrap();
        let b = payoff(&g, &random_device(&shape, 2).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!(matches!(canonicalize(&g), Err(Error::DegenerateGame { .. })));
    }

    #[test]
    fn witness_game_reproduces_witness_functional() {
        for (s, shape) in all_shapes().into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
            let y: Vec<HermitianBlock> = (0..shape.n_blocks()).map(|_| random_state(shape.dim, &mut rng)).collect();
            let g = game_from_witness(&y, &shape).unwrap();
            let d = random_device(&shape, 7).unwrap();
            let direct: f64 = d.blocks().iter().zip(&y).map(|(a, b)| a.inner(b)).sum();
            let p = payoff(&g, &d).unwrap();
            assert!(p > 0.0);
            let d2 = random_device(&shape, 8).unwrap();
            let direct2: f64 = d2.blocks().iter().zip(&y).map(|(a, b)| a.inner(b)).sum();
            // Same proportionality constant for every device.
            assert!((p / direct - payoff(&g, &d2).unwrap() / direct2).abs() < 1e-9, "{shape:?}");
        }
    }

    #[test]
    fn canonical_form() {
        let shape = DeviceShape::povm(2, 2);
        let g = random_game(&shape, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let can = canonicalize(&g).unwrap();
        assert!(can.canonical);
        let (lo, hi) = class_payoff_range(&can).unwrap();
        assert!(lo.abs() < 1e-7 && (hi - 1.0).abs() < 1e-7);
        let again = canonicalize(&can).unwrap();
        let doubled = canonicalize(&g.scaled(2.0)).unwrap();
        for k in 0..can.rewards.len() {
            assert!((&again.rewards[k] - &can.rewards[k]).amax() < 1e-7);
            assert!((&doubled.rewards[k] - &can.rewards[k]).amax() < 1e-7);
        }
        let y = vec![HermitianBlock::identity(2); 2];
        let constant = game_from_witness(&y, &shape).unwrap();
        assert!(matches!(canonicalize(&constant), Err(Error::DegenerateGame { .. })));
    }

    #[test]
    fn ratio_for_noisy_povm() {
        let d = noisy_z(0.5);
        let f = FreeSetSpec::for_device(FreeSetKind::TrivialPovm, &d).unwrap();
        let r = compute_weight(&d, &f).unwrap();
        let rep = verify_ratio(&d, &f, &r).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!((rep.ratio - 0.5).abs() < 1e-5);
        let g = game_from_witness(&r.witness_blocks(), &d.shape()).unwrap();
        let (n1, d1) = ratio_for_game(&d, &f, &g).unwrap();
        let (n2, d2) = ratio_for_game(&d, &f, &g.scaled(3.5)).unwrap();
        assert!((n1 / d1 - n2 / d2).abs() < 1e-7);
    }

    #[test]
    fn ratio_for_free_device() {
        let d = Device::Povm(Povm::trivial(&[0.4, 0.6], 2));
        let f = FreeSetSpec::for_device(FreeSetKind::TrivialPovm, &d).unwrap();
        let r = compute_weight(&d, &f).unwrap();
        let rep = verify_ratio(&d, &f, &r).unwrap();
        assert!(rep.pass && (rep.ratio - 1.0).abs() < 1e-5, "{rep:?}");
    }

    #[test]
    fn ratio_for_mub_pair() {
        let d = Device::MeasurementAssemblage(MeasurementAssemblage {
            effects: vec![Povm::sharp(&HermitianBlock::pauli_z()).effects, Povm::sharp(&HermitianBlock::pauli_x()).effects],
        });
        let f = FreeSetSpec::for_device(FreeSetKind::JointlyMeasurable, &d).unwrap();
        let r = compute_weight(&d, &f).unwrap();
        assert_eq!(r.weight, 1.0);
        let rep = verify_ratio(&d, &f, &r).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.numerator <= 1e-5 && rep.denominator >= 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn payoff_is_linear(seed in 0u64..10_000, alpha in 0.0f64..1.0, s in 0usize..7) {
            let shape = all_shapes()[s];
            let g = random_game(&shape, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let d1 = random_device(&shape, seed + 1).unwrap();
            let d2 = random_device(&shape, seed + 2).unwrap();
            let mix: Vec<HermitianBlock> =
                d1.blocks().iter().zip(d2.blocks()).map(|(a, b)| &a.scale(alpha) + &b.scale(1.0 - alpha)).collect();
            let m = Device::from_blocks(&shape, mix).unwrap();
            let lhs = payoff(&g, &m).unwrap();
            let rhs = alpha * payoff(&g, &d1).unwrap() + (1.0 - alpha) * payoff(&g, &d2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
