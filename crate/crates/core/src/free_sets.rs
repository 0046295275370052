//! Cone encodings of free sets.
//!
//! A free set `F` enters the weight program only through its cone
//! `C_F = {α D_F : α ≥ 0, D_F ∈ F}`, described by a [`ConeBundle`]: a list of
//! auxiliary PSD blocks, a linear image of those blocks for every device
//! block, and homogeneous linear equalities among them.

use std::fmt;
use std::sync::Arc;

use crate::devices::{Device, DeviceClass, DeviceShape};
use crate::error::{Error, Result};
use crate::linalg::{partial_trace, HermitianBlock, Subsystem};
use crate::linmap::HermitianMap;
use crate::solver::{ConeProgram, SolveStatus, SolverSettings};

/// Upper limit on the number of deterministic strategies enumerated.
pub const STRATEGY_LIMIT: usize = 1_000_000;

/// `(block, map)` terms summed into one operator.
pub type Terms = Vec<(usize, HermitianMap)>;

#[derive(Clone, Debug)]
pub struct ConeBundle {
    pub aux_dims: Vec<usize>,
    /// `D̂_k = Σ Φ(aux_b)` for each flattened device block `k`.
    pub images: Vec<Terms>,
    /// Constraints `Σ Φ(aux_b) = 0`.
    pub equalities: Vec<Terms>,
    /// Set when the cone is an outer approximation of `C_F`.
    pub relaxed: bool,
}

impl ConeBundle {
    /// Evaluates the device blocks `D̂_k` from auxiliary values.
    pub fn image(&self, aux: &[HermitianBlock]) -> Result<Vec<HermitianBlock>> {
        self.images
            .iter()
            .map(|terms| {
                let mut acc: Option<HermitianBlock> = None;
                for (b, m) in terms {
                    let v = m.apply(&aux[*b])?;
                    acc = Some(match acc {
                        Some(a) => &a + &v,
                        None => v,
                    });
                }
                acc.ok_or_else(|| Error::Incompatible("device block with empty image".into()))
            })
            .collect()
    }

    /// Adds the auxiliary blocks and the cone equalities to `p`; returns the
    /// block ids in `p` of the auxiliary blocks.
    pub fn install(&self, p: &mut ConeProgram) -> Result<Vec<usize>> {
        let ids: Vec<usize> = self.aux_dims.iter().map(|&d| p.add_block(d)).collect();
        for eq in &self.equalities {
            let out = eq.first().map(|(_, m)| m.out_dim()).ok_or_else(|| Error::Incompatible("empty equality".into()))?;
            let terms = eq.iter().map(|(b, m)| (ids[*b], m.clone())).collect();
            p.add_matrix_equality(terms, &HermitianBlock::zeros(out))?;
        }
        Ok(ids)
    }

    /// Image terms for device block `k` in terms of program block ids.
    pub fn terms_for(&self, k: usize, ids: &[usize]) -> Terms {
        self.images[k].iter().map(|(b, m)| (ids[*b], m.clone())).collect()
    }
}

type Generator = dyn Fn(&DeviceShape) -> Result<ConeBundle> + Send + Sync;

/// User-supplied cone generator.
#[derive(Clone)]
pub struct CustomFreeSet {
    pub name: String,
    pub generator: Arc<Generator>,
}

impl fmt::Debug for CustomFreeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFreeSet").field("name", &self.name).finish_non_exhaustive()
    }
}

impl CustomFreeSet {
    pub fn new(name: impl Into<String>, g: impl Fn(&DeviceShape) -> Result<ConeBundle> + Send + Sync + 'static) -> Self {
        CustomFreeSet { name: name.into(), generator: Arc::new(g) }
    }

    /// Trace-and-prepare instruments: `J_{i|x} = 𝟙/dH ⊗ ω_{i|x}` with
    /// `Σ_i tr ω_{i|x}` independent of `x`. Also covers single channels.
    pub fn product_instruments() -> Self {
        Self::new("product-instrument", product_bundle)
    }
}

#[derive(Clone, Debug)]
pub enum FreeSetKind {
    TrivialEnsemble,
    TrivialPovm,
    JointlyMeasurable,
    Unsteerable,
    PptState,
    EntanglementBreakingPpt,
    Custom(CustomFreeSet),
}

impl FreeSetKind {
    pub fn name(&self) -> &str {
        match self {
            FreeSetKind::TrivialEnsemble => "trivial-ensemble",
            FreeSetKind::TrivialPovm => "trivial-povm",
            FreeSetKind::JointlyMeasurable => "jm",
            FreeSetKind::Unsteerable => "lhs",
            FreeSetKind::PptState => "ppt-state",
            FreeSetKind::EntanglementBreakingPpt => "eb-ppt",
            FreeSetKind::Custom(c) => &c.name,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "trivial-ensemble" => FreeSetKind::TrivialEnsemble,
            "trivial-povm" => FreeSetKind::TrivialPovm,
            "jm" => FreeSetKind::JointlyMeasurable,
            "lhs" => FreeSetKind::Unsteerable,
            "ppt-state" => FreeSetKind::PptState,
            "eb-ppt" => FreeSetKind::EntanglementBreakingPpt,
            "product-instrument" => FreeSetKind::Custom(CustomFreeSet::product_instruments()),
            _ => return None,
        })
    }

    fn supports(&self, class: DeviceClass) -> bool {
        use DeviceClass::*;
        match self {
            FreeSetKind::TrivialEnsemble => matches!(class, Ensemble | StateAssemblage),
            FreeSetKind::TrivialPovm | FreeSetKind::JointlyMeasurable => matches!(class, Povm | MeasurementAssemblage),
            FreeSetKind::Unsteerable => class == StateAssemblage,
            FreeSetKind::PptState => class == State,
            FreeSetKind::EntanglementBreakingPpt => class == Channel,
            FreeSetKind::Custom(_) => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FreeSetSpec {
    pub kind: FreeSetKind,
    pub shape: DeviceShape,
}

impl FreeSetSpec {
    pub fn new(kind: FreeSetKind, shape: DeviceShape) -> Result<Self> {
        if !kind.supports(shape.class) {
            return Err(Error::Incompatible(format!(
                "free set {} does not apply to {} devices",
                kind.name(),
                shape.class.tag()
            )));
        }
        match kind {
            FreeSetKind::PptState if shape.dims.is_none() => {
                return Err(Error::Incompatible("ppt-state requires a bipartite state".into()))
            }
            _ => {}
        }
        Ok(FreeSetSpec { kind, shape })
    }

    pub fn for_device(kind: FreeSetKind, d: &Device) -> Result<Self> {
        Self::new(kind, d.shape())
    }

    pub fn name(&self) -> &str {
        self.kind.name()
    }

    /// Whether the encoded cone strictly contains `C_F`.
    pub fn is_relaxed(&self) -> bool {
        matches!(self.kind, FreeSetKind::EntanglementBreakingPpt)
            && self.shape.dims.is_some_and(|(a, b)| a * b > 6)
    }

    pub fn cone_constraints(&self) -> Result<ConeBundle> {
        let s = &self.shape;
        let mut bundle = match &self.kind {
            FreeSetKind::TrivialEnsemble => trivial_ensemble(s),
            FreeSetKind::TrivialPovm => trivial_povm(s),
            FreeSetKind::JointlyMeasurable => jointly_measurable(s)?,
            FreeSetKind::Unsteerable => unsteerable(s)?,
            FreeSetKind::PptState => ppt_state(s),
            FreeSetKind::EntanglementBreakingPpt => eb_ppt(s),
            FreeSetKind::Custom(c) => (c.generator)(s)?,
        };
        if bundle.images.len() != s.n_blocks() {
            return Err(Error::DimensionMismatch { expected: s.n_blocks(), actual: bundle.images.len() });
        }
        bundle.relaxed |= self.is_relaxed();
        Ok(bundle)
    }
}

/// Deterministic response functions `λ: x ↦ i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeterministicStrategySet {
    pub n_settings: usize,
    pub n_outcomes: usize,
    /// `strategies[λ][x]` is the outcome assigned to setting `x`.
    pub strategies: Vec<Vec<usize>>,
}

/// Enumerates all `n_outcomes^n_settings` strategies in lexicographic order.
pub fn deterministic_strategies(n_settings: usize, n_outcomes: usize) -> Result<DeterministicStrategySet> {
    if n_settings == 0 || n_outcomes == 0 {
        return Err(Error::Incompatible("strategy counts must be positive".into()));
    }
    let count = (n_outcomes as f64).powi(n_settings as i32);
    if count > STRATEGY_LIMIT as f64 {
        return Err(Error::TooManyStrategies { count, limit: STRATEGY_LIMIT });
    }
    let mut strategies = Vec::with_capacity(count as usize);
    let mut cur = vec![0usize; n_settings];
    loop {
        strategies.push(cur.clone());
        let mut pos = n_settings;
        loop {
            if pos == 0 {
                return Ok(DeterministicStrategySet { n_settings, n_outcomes, strategies });
            }
            pos -= 1;
            cur[pos] += 1;
            if cur[pos] < n_outcomes {
                break;
            }
            cur[pos] = 0;
        }
    }
}

fn trivial_ensemble(s: &DeviceShape) -> ConeBundle {
    ConeBundle {
        aux_dims: vec![s.dim],
        images: (0..s.n_blocks()).map(|_| vec![(0, HermitianMap::identity(s.dim))]).collect(),
        equalities: vec![],
        relaxed: false,
    }
}

fn trivial_povm(s: &DeviceShape) -> ConeBundle {
    let n = s.n_blocks();
    let images = (0..n).map(|k| vec![(k, HermitianMap::scalar_to_identity(s.dim, 1.0))]).collect();
    let o = s.n_outcomes;
    let equalities = (1..s.n_settings)
        .map(|x| {
            (0..o)
                .map(|i| (x * o + i, HermitianMap::identity(1)))
                .chain((0..o).map(|i| (i, HermitianMap::scaled(1, -1.0))))
                .collect()
        })
        .collect();
    ConeBundle { aux_dims: vec![1; n], images, equalities, relaxed: false }
}

/// `σ̂_{i|x} = Σ_λ D(i|x,λ) G_λ`.
fn strategy_images(s: &DeviceShape, strat: &DeterministicStrategySet) -> Vec<Terms> {
    let o = s.n_outcomes;
    let mut images = vec![Vec::new(); s.n_blocks()];
    for (l, st) in strat.strategies.iter().enumerate() {
        for (x, &i) in st.iter().enumerate() {
            images[x * o + i].push((l, HermitianMap::identity(s.dim)));
        }
    }
    images
}

fn jointly_measurable(s: &DeviceShape) -> Result<ConeBundle> {
    let strat = deterministic_strategies(s.n_settings, s.n_outcomes)?;
    let images = strategy_images(s, &strat);
    // The parent POVM sums to a multiple of the identity.
    let d = s.dim;
    let traceless = HermitianMap::from_fn(d, d, |g| g - &HermitianBlock::identity(d).scale(g.trace() / d as f64));
    let eq = (0..strat.strategies.len()).map(|l| (l, traceless.clone())).collect();
    Ok(ConeBundle { aux_dims: vec![d; strat.strategies.len()], images, equalities: vec![eq], relaxed: false })
}

fn unsteerable(s: &DeviceShape) -> Result<ConeBundle> {
    let strat = deterministic_strategies(s.n_settings, s.n_outcomes)?;
    let images = strategy_images(s, &strat);
    Ok(ConeBundle { aux_dims: vec![s.dim; strat.strategies.len()], images, equalities: vec![], relaxed: false })
}

/// Blocks `σ` and `K` with `K = σ^{T_B}`.
fn ppt_pair(dims: (usize, usize)) -> (Vec<usize>, Terms) {
    let n = dims.0 * dims.1;
    let eq = vec![
        (0, HermitianMap::partial_transpose(dims, Subsystem::Second)),
        (1, HermitianMap::scaled(n, -1.0)),
    ];
    (vec![n, n], eq)
}

fn ppt_state(s: &DeviceShape) -> ConeBundle {
    let dims = s.dims.expect("checked at construction");
    let (aux_dims, eq) = ppt_pair(dims);
    ConeBundle { aux_dims, images: vec![vec![(0, HermitianMap::identity(s.dim))]], equalities: vec![eq], relaxed: false }
}

fn eb_ppt(s: &DeviceShape) -> ConeBundle {
    let dims = s.dims.expect("channel shapes carry dims");
    let (aux_dims, pt) = ppt_pair(dims);
    let dh = dims.0;
    let marginal = HermitianMap::from_fn(s.dim, dh, |j| {
        let m = partial_trace(j, dims, Subsystem::Second).expect("dimension fixed by construction");
        &m - &HermitianBlock::identity(dh).scale(j.trace() / dh as f64)
    });
    ConeBundle {
        aux_dims,
        images: vec![vec![(0, HermitianMap::identity(s.dim))]],
        equalities: vec![pt, vec![(0, marginal)]],
        relaxed: false,
    }
}

fn product_bundle(s: &DeviceShape) -> Result<ConeBundle> {
    let (dh, dk) = match (s.class, s.dims) {
        (DeviceClass::Channel | DeviceClass::InstrumentSet, Some(d)) => d,
        _ => return Err(Error::Incompatible("product instruments need a channel or instrument shape".into())),
    };
    let n = s.n_blocks();
    let embed = HermitianMap::kron_left(&HermitianBlock::identity(dh).scale(1.0 / dh as f64), dk);
    let images = (0..n).map(|k| vec![(k, embed.clone())]).collect();
    let tr = HermitianMap::from_fn(dk, 1, |w| HermitianBlock::from_real_diagonal(&[w.trace()]));
    let o = s.n_outcomes;
    let equalities = (1..s.n_settings)
        .map(|x| {
            (0..o)
                .map(|i| (x * o + i, tr.clone()))
                .chain((0..o).map(|i| (i, tr.scale(-1.0))))
                .collect()
        })
        .collect();
    Ok(ConeBundle { aux_dims: vec![dk; n], images, equalities, relaxed: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Inside,
    Outside,
}

/// Feasibility of `D ∈ C_F` with matching normalization.
pub fn membership_check(d: &Device, f: &FreeSetSpec) -> Result<Membership> {
    membership_check_with(d, f, &SolverSettings::from_env())
}

pub fn membership_check_with(d: &Device, f: &FreeSetSpec, settings: &SolverSettings) -> Result<Membership> {
    if d.shape() != f.shape {
        return Err(Error::Incompatible("device shape differs from free-set shape".into()));
    }
    let bundle = f.cone_constraints()?;
    let mut p = ConeProgram::new();
    let ids = bundle.install(&mut p)?;
    for (k, block) in d.blocks().iter().enumerate() {
        p.add_matrix_equality(bundle.terms_for(k, &ids), block)?;
    }
    match p.solve_with(settings)?.status {
        SolveStatus::Optimal => Ok(Membership::Inside),
        SolveStatus::PrimalInfeasible => Ok(Membership::Outside),
        s => Err(Error::Solver(s)),
    }
}
