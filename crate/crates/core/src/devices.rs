//! Device types: states, ensembles, assemblages, POVMs, channels and
//! instrument sets, with invariant checks and seeded random generators.
//!
//! Every device flattens to an ordered list of Hermitian blocks (setting-major,
//! outcome-minor), which is the form the cone programs consume. Labels are
//! dense 0-based `(outcome, setting)` pairs.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{choi_from_kraus, kron, partial_trace, sum_blocks, HermitianBlock, Subsystem, C64, PSD_TOL};

/// Tolerance for normalization invariants.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceClass {
    State,
    Ensemble,
    StateAssemblage,
    Povm,
    MeasurementAssemblage,
    Channel,
    InstrumentSet,
}

impl DeviceClass {
    pub fn tag(self) -> &'static str {
        match self {
            DeviceClass::State => "state",
            DeviceClass::Ensemble => "ensemble",
            DeviceClass::StateAssemblage => "state-assemblage",
            DeviceClass::Povm => "povm",
            DeviceClass::MeasurementAssemblage => "measurement-assemblage",
            DeviceClass::Channel => "channel",
            DeviceClass::InstrumentSet => "instrument-set",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [
            DeviceClass::State,
            DeviceClass::Ensemble,
            DeviceClass::StateAssemblage,
            DeviceClass::Povm,
            DeviceClass::MeasurementAssemblage,
            DeviceClass::Channel,
            DeviceClass::InstrumentSet,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }

    /// State-like classes are scored by games that supply measurements.
    pub fn is_state_like(self) -> bool {
        matches!(self, DeviceClass::State | DeviceClass::Ensemble | DeviceClass::StateAssemblage)
    }

    pub fn is_measurement_like(self) -> bool {
        matches!(self, DeviceClass::Povm | DeviceClass::MeasurementAssemblage)
    }

    pub fn is_transformation(self) -> bool {
        matches!(self, DeviceClass::Channel | DeviceClass::InstrumentSet)
    }
}

/// Class, block dimension and label ranges of a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeviceShape {
    pub class: DeviceClass,
    /// Dimension of every block (for channels and instruments `dH * dK`).
    pub dim: usize,
    /// Bipartition `(dH, dK)` for channels, instruments and bipartite states.
    pub dims: Option<(usize, usize)>,
    pub n_outcomes: usize,
    pub n_settings: usize,
}

impl DeviceShape {
    pub fn state(dim: usize) -> Self {
        Self { class: DeviceClass::State, dim, dims: None, n_outcomes: 1, n_settings: 1 }
    }

    pub fn bipartite_state(dims: (usize, usize)) -> Self {
        Self { class: DeviceClass::State, dim: dims.0 * dims.1, dims: Some(dims), n_outcomes: 1, n_settings: 1 }
    }

    pub fn ensemble(dim: usize, n: usize) -> Self {
        Self { class: DeviceClass::Ensemble, dim, dims: None, n_outcomes: n, n_settings: 1 }
    }

    pub fn state_assemblage(dim: usize, n_outcomes: usize, n_settings: usize) -> Self {
        Self { class: DeviceClass::StateAssemblage, dim, dims: None, n_outcomes, n_settings }
    }

    pub fn povm(dim: usize, n: usize) -> Self {
        Self { class: DeviceClass::Povm, dim, dims: None, n_outcomes: n, n_settings: 1 }
    }

    pub fn measurement_assemblage(dim: usize, n_outcomes: usize, n_settings: usize) -> Self {
        Self { class: DeviceClass::MeasurementAssemblage, dim, dims: None, n_outcomes, n_settings }
    }

    pub fn channel(dims: (usize, usize)) -> Self {
        Self { class: DeviceClass::Channel, dim: dims.0 * dims.1, dims: Some(dims), n_outcomes: 1, n_settings: 1 }
    }

    pub fn instrument_set(dims: (usize, usize), n_outcomes: usize, n_settings: usize) -> Self {
        Self { class: DeviceClass::InstrumentSet, dim: dims.0 * dims.1, dims: Some(dims), n_outcomes, n_settings }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_outcomes * self.n_settings
    }

    /// `(outcome, setting)` label of each flattened block.
    pub fn labels(&self) -> Vec<(usize, usize)> {
        (0..self.n_settings).flat_map(|x| (0..self.n_outcomes).map(move |i| (i, x))).collect()
    }

    /// Expected total trace of the flattened blocks of a normalized device.
    pub fn normalization(&self) -> f64 {
        match self.class {
            DeviceClass::State | DeviceClass::Ensemble | DeviceClass::Channel => 1.0,
            DeviceClass::StateAssemblage | DeviceClass::InstrumentSet => self.n_settings as f64,
            DeviceClass::Povm => self.dim as f64,
            DeviceClass::MeasurementAssemblage => (self.n_settings * self.dim) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub rho: HermitianBlock,
    /// Bipartition, when the state lives on `A ⊗ B`.
    pub dims: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    /// `(p(i), ϱ_i)` pairs.
    pub elements: Vec<(f64, HermitianBlock)>,
}

/// Unnormalized `σ_{i|x} = p(i,x) ϱ_{i|x}`, indexed `[x][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateAssemblage {
    pub sigma: Vec<Vec<HermitianBlock>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Povm {
    pub effects: Vec<HermitianBlock>,
}

/// `M_{i|x}` indexed `[x][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementAssemblage {
    pub effects: Vec<Vec<HermitianBlock>>,
}

/// Choi state on `H ⊗ K` with `dims = (dH, dK)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelChoi {
    pub j: HermitianBlock,
    pub dims: (usize, usize),
}

/// Subnormalized Choi blocks `J_{i|x}` indexed `[x][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentSet {
    pub blocks: Vec<Vec<HermitianBlock>>,
    pub dims: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Device {
    State(State),
    Ensemble(Ensemble),
    StateAssemblage(StateAssemblage),
    Povm(Povm),
    MeasurementAssemblage(MeasurementAssemblage),
    Channel(ChannelChoi),
    InstrumentSet(InstrumentSet),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Shape,
    NotPsd,
    Trace,
    Probability,
    SumNotIdentity,
    NoSignalling,
    PartialTrace,
}

/// A failed invariant with its location and size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::Shape => "inconsistent shape",
            ViolationKind::NotPsd => "not positive semidefinite, min eigenvalue",
            ViolationKind::Trace => "trace off, residual",
            ViolationKind::Probability => "probabilities invalid, residual",
            ViolationKind::SumNotIdentity => "sum ≠ identity, residual",
            ViolationKind::NoSignalling => "marginal traces differ across settings, residual",
            ViolationKind::PartialTrace => "partial trace ≠ identity/d, residual",
        };
        write!(f, "{} at {}: {} {}", self.kind_name(), self.location, what, fmt_mag(self.magnitude))
    }
}

fn fmt_mag(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e4) {
        format!("{x:.3e}")
    } else {
        let s = format!("{x:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Violation {
    fn kind_name(&self) -> &'static str {
        match self.kind {
            ViolationKind::Shape => "shape",
            ViolationKind::NotPsd => "positivity",
            ViolationKind::Trace => "trace",
            ViolationKind::Probability => "probability",
            ViolationKind::SumNotIdentity => "normalization",
            ViolationKind::NoSignalling => "no-signalling",
            ViolationKind::PartialTrace => "trace preservation",
        }
    }

    fn new(kind: ViolationKind, location: impl Into<String>, magnitude: f64) -> Self {
        Self { kind, location: location.into(), magnitude }
    }
}

fn check_psd(b: &HermitianBlock, loc: &str, tol: f64, out: &mut Vec<Violation>) {
    match b.min_eigenvalue() {
        Ok(l) if l >= -tol => {}
        Ok(l) => out.push(Violation::new(ViolationKind::NotPsd, loc, l)),
        Err(_) => out.push(Violation::new(ViolationKind::NotPsd, loc, f64::NAN)),
    }
}

fn op_residual(a: &HermitianBlock, b: &HermitianBlock) -> f64 {
    (a - b).operator_norm().unwrap_or(f64::INFINITY)
}

fn check_rectangular(rows: &[Vec<HermitianBlock>], dim: usize, out: &mut Vec<Violation>) -> bool {
    if rows.is_empty() || rows[0].is_empty() {
        out.push(Violation::new(ViolationKind::Shape, "blocks", 0.0));
        return false;
    }
    let n = rows[0].len();
    let mut ok = true;
    for (x, row) in rows.iter().enumerate() {
        if row.len() != n {
            out.push(Violation::new(ViolationKind::Shape, format!("setting {x}"), row.len() as f64));
            ok = false;
        }
        for (i, b) in row.iter().enumerate() {
            if b.dim() != dim {
                out.push(Violation::new(ViolationKind::Shape, format!("block ({i},{x})"), b.dim() as f64));
                ok = false;
            }
        }
    }
    ok
}

impl Device {
    pub fn class(&self) -> DeviceClass {
        match self {
            Device::State(_) => DeviceClass::State,
            Device::Ensemble(_) => DeviceClass::Ensemble,
            Device::StateAssemblage(_) => DeviceClass::StateAssemblage,
            Device::Povm(_) => DeviceClass::Povm,
            Device::MeasurementAssemblage(_) => DeviceClass::MeasurementAssemblage,
            Device::Channel(_) => DeviceClass::Channel,
            Device::InstrumentSet(_) => DeviceClass::InstrumentSet,
        }
    }

    pub fn shape(&self) -> DeviceShape {
        match self {
            Device::State(s) => DeviceShape { dims: s.dims, ..DeviceShape::state(s.rho.dim()) },
            Device::Ensemble(e) => DeviceShape::ensemble(e.elements.first().map_or(0, |(_, r)| r.dim()), e.elements.len()),
            Device::StateAssemblage(a) => DeviceShape::state_assemblage(
                a.sigma.first().and_then(|r| r.first()).map_or(0, |b| b.dim()),
                a.sigma.first().map_or(0, |r| r.len()),
                a.sigma.len(),
            ),
            Device::Povm(p) => DeviceShape::povm(p.effects.first().map_or(0, |b| b.dim()), p.effects.len()),
            Device::MeasurementAssemblage(m) => DeviceShape::measurement_assemblage(
                m.effects.first().and_then(|r| r.first()).map_or(0, |b| b.dim()),
                m.effects.first().map_or(0, |r| r.len()),
                m.effects.len(),
            ),
            Device::Channel(ch) => DeviceShape::channel(ch.dims),
            Device::InstrumentSet(s) => {
                DeviceShape::instrument_set(s.dims, s.blocks.first().map_or(0, |r| r.len()), s.blocks.len())
            }
        }
    }

    /// Flattened blocks, setting-major.
    pub fn blocks(&self) -> Vec<HermitianBlock> {
        match self {
            Device::State(s) => vec![s.rho.clone()],
            Device::Ensemble(e) => e.elements.iter().map(|(p, r)| r.scale(*p)).collect(),
            Device::StateAssemblage(a) => a.sigma.iter().flatten().cloned().collect(),
            Device::Povm(p) => p.effects.clone(),
            Device::MeasurementAssemblage(m) => m.effects.iter().flatten().cloned().collect(),
            Device::Channel(ch) => vec![ch.j.clone()],
            Device::InstrumentSet(s) => s.blocks.iter().flatten().cloned().collect(),
        }
    }

    /// Rebuilds a device of the given shape from flattened blocks.
    pub fn from_blocks(shape: &DeviceShape, blocks: Vec<HermitianBlock>) -> Result<Device> {
        if blocks.len() != shape.n_blocks() {
            return Err(Error::DimensionMismatch { expected: shape.n_blocks(), actual: blocks.len() });
        }
        if let Some(b) = blocks.iter().find(|b| b.dim() != shape.dim) {
            return Err(Error::DimensionMismatch { expected: shape.dim, actual: b.dim() });
        }
        let grid = |blocks: Vec<HermitianBlock>| -> Vec<Vec<HermitianBlock>> {
            blocks.chunks(shape.n_outcomes).map(|c| c.to_vec()).collect()
        };
        Ok(match shape.class {
            DeviceClass::State => Device::State(State { rho: blocks.into_iter().next().unwrap(), dims: shape.dims }),
            DeviceClass::Ensemble => Device::Ensemble(Ensemble {
                elements: blocks
                    .into_iter()
                    .map(|b| {
                        let p = b.trace();
                        if p > 1e-300 {
                            (p, b.scale(1.0 / p))
                        } else {
                            (0.0, HermitianBlock::identity(shape.dim).scale(1.0 / shape.dim as f64))
                        }
                    })
                    .collect(),
            }),
            DeviceClass::StateAssemblage => Device::StateAssemblage(StateAssemblage { sigma: grid(blocks) }),
            DeviceClass::Povm => Device::Povm(Povm { effects: blocks }),
            DeviceClass::MeasurementAssemblage => {
                Device::MeasurementAssemblage(MeasurementAssemblage { effects: grid(blocks) })
            }
            DeviceClass::Channel => Device::Channel(ChannelChoi {
                j: blocks.into_iter().next().unwrap(),
                dims: shape.dims.ok_or_else(|| Error::Incompatible("channel shape without dims".into()))?,
            }),
            DeviceClass::InstrumentSet => Device::InstrumentSet(InstrumentSet {
                dims: shape.dims.ok_or_else(|| Error::Incompatible("instrument shape without dims".into()))?,
                blocks: grid(blocks),
            }),
        })
    }

    /// Checks every invariant of the device class with the default tolerances.
    pub fn validate(&self) -> Vec<Violation> {
        self.validate_with_tol(NORMALIZATION_TOL)
    }

    /// Same checks with a caller-chosen tolerance for positivity and
    /// normalization residuals.
    pub fn validate_with_tol(&self, tol: f64) -> Vec<Violation> {
        let psd_tol = tol.max(PSD_TOL);
        let mut out = Vec::new();
        match self {
            Device::State(s) => {
                if let Some((a, b)) = s.dims {
                    if a * b != s.rho.dim() {
                        out.push(Violation::new(ViolationKind::Shape, "dims", (a * b) as f64));
                    }
                }
                check_psd(&s.rho, "state", psd_tol, &mut out);
                let r = s.rho.trace() - 1.0;
                if r.abs() > tol {
                    out.push(Violation::new(ViolationKind::Trace, "state", r));
                }
            }
            Device::Ensemble(e) => {
                if e.elements.is_empty() {
                    out.push(Violation::new(ViolationKind::Shape, "elements", 0.0));
                    return out;
                }
                let d = e.elements[0].1.dim();
                let mut total = 0.0;
                for (i, (p, rho)) in e.elements.iter().enumerate() {
                    if rho.dim() != d {
                        out.push(Violation::new(ViolationKind::Shape, format!("element {i}"), rho.dim() as f64));
                        continue;
                    }
                    if *p < -tol {
                        out.push(Violation::new(ViolationKind::Probability, format!("p({i})"), *p));
                    }
                    total += p;
                    check_psd(rho, &format!("state {i}"), psd_tol, &mut out);
                    let r = rho.trace() - 1.0;
                    if r.abs() > tol {
                        out.push(Violation::new(ViolationKind::Trace, format!("state {i}"), r));
                    }
                }
                if (total - 1.0).abs() > tol {
                    out.push(Violation::new(ViolationKind::Probability, "sum of p", total - 1.0));
                }
            }
            Device::StateAssemblage(a) => {
                let dim = a.sigma.first().and_then(|r| r.first()).map_or(0, |b| b.dim());
                if !check_rectangular(&a.sigma, dim, &mut out) {
                    return out;
                }
                let marginal: Vec<f64> = a.sigma.iter().map(|row| row.iter().map(|b| b.trace()).sum()).collect();
                for (x, row) in a.sigma.iter().enumerate() {
                    for (i, b) in row.iter().enumerate() {
                        check_psd(b, &format!("sigma ({i},{x})"), psd_tol, &mut out);
                    }
                    let r = marginal[x] - marginal[0];
                    if r.abs() > tol {
                        out.push(Violation::new(ViolationKind::NoSignalling, format!("setting {x}"), r));
                    }
                }
                let total: f64 = marginal.iter().sum();
                let r = total - a.sigma.len() as f64;
                if r.abs() > tol {
                    out.push(Violation::new(ViolationKind::Trace, "total", r));
                }
            }
            Device::Povm(p) => {
                if p.effects.is_empty() {
                    out.push(Violation::new(ViolationKind::Shape, "effects", 0.0));
                    return out;
                }
                check_povm(&p.effects, "", psd_tol, tol, &mut out);
            }
            Device::MeasurementAssemblage(m) => {
                let dim = m.effects.first().and_then(|r| r.first()).map_or(0, |b| b.dim());
                if !check_rectangular(&m.effects, dim, &mut out) {
                    return out;
                }
                for (x, row) in m.effects.iter().enumerate() {
                    check_povm(row, &format!(" (setting {x})"), psd_tol, tol, &mut out);
                }
            }
            Device::Channel(ch) => {
                if ch.j.dim() != ch.dims.0 * ch.dims.1 {
                    out.push(Violation::new(ViolationKind::Shape, "dims", ch.j.dim() as f64));
                    return out;
                }
                check_psd(&ch.j, "choi", psd_tol, &mut out);
                let marg = partial_trace(&ch.j, ch.dims, Subsystem::Second).unwrap();
                let r = op_residual(&marg, &HermitianBlock::identity(ch.dims.0).scale(1.0 / ch.dims.0 as f64));
                if r > tol {
                    out.push(Violation::new(ViolationKind::PartialTrace, "choi", r));
                }
                let r = ch.j.trace() - 1.0;
                if r.abs() > tol {
                    out.push(Violation::new(ViolationKind::Trace, "choi", r));
                }
            }
            Device::InstrumentSet(s) => {
                let dim = s.dims.0 * s.dims.1;
                if !check_rectangular(&s.blocks, dim, &mut out) {
                    return out;
                }
                let target = HermitianBlock::identity(s.dims.0).scale(1.0 / s.dims.0 as f64);
                for (x, row) in s.blocks.iter().enumerate() {
                    for (i, b) in row.iter().enumerate() {
                        check_psd(b, &format!("block ({i},{x})"), psd_tol, &mut out);
                    }
                    let total = sum_blocks(row).unwrap();
                    let marg = partial_trace(&total, s.dims, Subsystem::Second).unwrap();
                    let r = op_residual(&marg, &target);
                    if r > tol {
                        out.push(Violation::new(ViolationKind::PartialTrace, format!("setting {x}"), r));
                    }
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Returns `self` when valid, the violations otherwise.
    pub fn checked(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidDevice(v))
        }
    }
}

fn check_povm(effects: &[HermitianBlock], suffix: &str, psd_tol: f64, tol: f64, out: &mut Vec<Violation>) {
    let d = effects[0].dim();
    for (i, e) in effects.iter().enumerate() {
        if e.dim() != d {
            out.push(Violation::new(ViolationKind::Shape, format!("effect {i}{suffix}"), e.dim() as f64));
            return;
        }
        check_psd(e, &format!("effect {i}{suffix}"), psd_tol, out);
    }
    let total = sum_blocks(effects).unwrap();
    let r = op_residual(&total, &HermitianBlock::identity(d));
    if r > tol {
        out.push(Violation::new(ViolationKind::SumNotIdentity, format!("effects{suffix}"), r));
    }
}

/// `η·d + (1−η)·noise`, blockwise.
pub fn noisy_mix(d: &Device, eta: f64, noise: &Device) -> Result<Device> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Incompatible(format!("visibility {eta} outside [0,1]")));
    }
    let shape = d.shape();
    if noise.shape() != shape {
        return Err(Error::Incompatible(format!(
            "noise shape {:?} does not match device shape {:?}",
            noise.shape(),
            shape
        )));
    }
    let blocks = d.blocks().iter().zip(noise.blocks()).map(|(a, b)| &a.scale(eta) + &b.scale(1.0 - eta)).collect();
    Device::from_blocks(&shape, blocks)
}

impl Povm {
    /// Projective measurement in the eigenbasis of a Pauli-like observable `o`
    /// with eigenvalues ±1: effects `(1 ± o)/2`.
    pub fn sharp(o: &HermitianBlock) -> Self {
        let id = HermitianBlock::identity(o.dim());
        Povm { effects: vec![(&id + o).scale(0.5), (&id - o).scale(0.5)] }
    }

    pub fn trivial(probabilities: &[f64], dim: usize) -> Self {
        Povm { effects: probabilities.iter().map(|&p| HermitianBlock::identity(dim).scale(p)).collect() }
    }
}

impl ChannelChoi {
    pub fn identity(d: usize) -> Self {
        Self { j: choi_from_kraus(&[DMatrix::<C64>::identity(d, d)]).unwrap(), dims: (d, d) }
    }

    pub fn from_kraus(kraus: &[DMatrix<C64>]) -> Result<Self> {
        let j = choi_from_kraus(kraus)?;
        let (dk, dh) = kraus[0].shape();
        Ok(Self { j, dims: (dh, dk) })
    }

    /// Completely depolarizing channel `ρ ↦ tr(ρ) 1/dK`.
    pub fn depolarizing(dims: (usize, usize)) -> Self {
        let n = dims.0 * dims.1;
        Self { j: HermitianBlock::identity(n).scale(1.0 / n as f64), dims }
    }
}

/// Complex Ginibre matrix with standard normal real and imaginary parts.
pub fn ginibre(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
}

fn ginibre_psd(d: usize, rng: &mut impl Rng) -> HermitianBlock {
    let g = ginibre(d, d, rng);
    HermitianBlock::symmetrized(&g * g.adjoint())
}

pub fn random_state(d: usize, rng: &mut impl Rng) -> HermitianBlock {
    let w = ginibre_psd(d, rng);
    let t = w.trace();
    w.scale(1.0 / t)
}

/// Random POVM: Ginibre positives `A_i` normalized by `S^{-1/2} A_i S^{-1/2}`.
pub fn random_povm(d: usize, n: usize, rng: &mut impl Rng) -> Vec<HermitianBlock> {
    let raw: Vec<HermitianBlock> = (0..n).map(|_| ginibre_psd(d, rng)).collect();
    let s = sum_blocks(&raw).unwrap().pseudo_inv_sqrt().expect("Ginibre sum is positive definite");
    raw.iter().map(|a| a.conjugate_by(s.matrix())).collect()
}

pub(crate) fn random_probabilities(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let t: f64 = w.iter().sum();
    w.iter().map(|x| x / t).collect()
}

/// Normalizes positive blocks on `H ⊗ K` so their summed `tr_K` equals `1/dH`.
fn normalize_choi_blocks(raw: Vec<HermitianBlock>, dims: (usize, usize)) -> Vec<HermitianBlock> {
    let total = sum_blocks(&raw).unwrap();
    let marg = partial_trace(&total, dims, Subsystem::Second).unwrap();
    let f = marg.pseudo_inv_sqrt().expect("Ginibre marginal is positive definite");
    let lift = kron(&f, &HermitianBlock::identity(dims.1)).scale(1.0 / (dims.0 as f64).sqrt());
    raw.iter().map(|b| b.conjugate_by(lift.matrix())).collect()
}

/// Deterministic random device of the requested shape.
pub fn random_device(shape: &DeviceShape, seed: u64) -> Result<Device> {
    if shape.dim == 0 || shape.n_outcomes == 0 || shape.n_settings == 0 {
        return Err(Error::Incompatible("random_device needs positive dimension and counts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = shape.dim;
    let dev = match shape.class {
        DeviceClass::State => Device::State(State { rho: random_state(d, &mut rng), dims: shape.dims }),
        DeviceClass::Ensemble => {
            let p = random_probabilities(shape.n_outcomes, &mut rng);
            Device::Ensemble(Ensemble { elements: p.into_iter().map(|p| (p, random_state(d, &mut rng))).collect() })
        }
        DeviceClass::StateAssemblage => {
            let rho = random_state(d, &mut rng);
            let root = rho.pseudo_sqrt()?;
            let sigma = (0..shape.n_settings)
                .map(|_| {
                    random_povm(d, shape.n_outcomes, &mut rng)
                        .into_iter()
                        .map(|m| m.transpose().conjugate_by(root.matrix()))
                        .collect()
                })
                .collect();
            Device::StateAssemblage(StateAssemblage { sigma })
        }
        DeviceClass::Povm => Device::Povm(Povm { effects: random_povm(d, shape.n_outcomes, &mut rng) }),
        DeviceClass::MeasurementAssemblage => Device::MeasurementAssemblage(MeasurementAssemblage {
            effects: (0..shape.n_settings).map(|_| random_povm(d, shape.n_outcomes, &mut rng)).collect(),
        }),
        DeviceClass::Channel => {
            let dims = shape.dims.ok_or_else(|| Error::Incompatible("channel needs dims".into()))?;
            let raw = vec![ginibre_psd(dims.0 * dims.1, &mut rng)];
            Device::Channel(ChannelChoi { j: normalize_choi_blocks(raw, dims).remove(0), dims })
        }
        DeviceClass::InstrumentSet => {
            let dims = shape.dims.ok_or_else(|| Error::Incompatible("instrument set needs dims".into()))?;
            let blocks = (0..shape.n_settings)
                .map(|_| {
                    let raw = (0..shape.n_outcomes).map(|_| ginibre_psd(dims.0 * dims.1, &mut rng)).collect();
                    normalize_choi_blocks(raw, dims)
                })
                .collect();
            Device::InstrumentSet(InstrumentSet { blocks, dims })
        }
    };
    Ok(dev)
}

/// Pure state `|0⟩` style basis vector as a projector.
pub fn basis_projector(d: usize, k: usize) -> HermitianBlock {
    let mut diag = vec![0.0; d];
    diag[k] = 1.0;
    HermitianBlock::from_real_diagonal(&diag)
}

pub(crate) fn maximally_mixed(d: usize) -> HermitianBlock {
    HermitianBlock::identity(d).scale(1.0 / d as f64)
}
