//! JSON documents for devices, weight results, games and certificates.
//!
//! Matrices are row-major arrays of `[re, im]` pairs. Device data is a grid
//! `data[x][i]` indexed by setting and outcome; single-setting kinds use one
//! row and states a single entry. Ensembles carry their probabilities
//! separately so that documents round-trip exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{Device, DeviceClass, DeviceShape, Ensemble, Violation};
use crate::dilation::{AnalyticTrivialWeight, ComponentCertificate, Extremality};
use crate::free_sets::Membership;
use crate::games::ExclusionGame;
use crate::linalg::{HermitianBlock, C64};
use crate::weight::WeightResult;

pub const SCHEMA_VERSION: &str = "1.0";

pub type Matrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("malformed JSON: {0}")]
    Malformed(serde_json::Error),
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid device: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invariant(Vec<Violation>),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> DocumentError {
    DocumentError::Schema { path: path.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    #[serde(default)]
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub settings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDocument {
    pub schema_version: String,
    pub kind: String,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    pub data: Vec<Vec<Matrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
}

pub fn matrix_to_json(h: &HermitianBlock) -> Matrix {
    let m = h.matrix();
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect()).collect()
}

fn matrix_from_json(m: &Matrix, dim: usize, path: &str) -> Result<HermitianBlock, DocumentError> {
    if m.len() != dim || m.iter().any(|row| row.len() != dim) {
        return Err(schema(path, format!("expected a {dim}x{dim} matrix")));
    }
    if m.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(schema(path, "non-finite entry"));
    }
    let raw = DMatrix::from_fn(dim, dim, |r, c| C64::new(m[r][c][0], m[r][c][1]));
    HermitianBlock::new(raw).map_err(|e| schema(path, e.to_string()))
}

fn shape_for(doc: &DeviceDocument) -> Result<DeviceShape, DocumentError> {
    let class = DeviceClass::from_tag(&doc.kind).ok_or_else(|| schema("kind", format!("unknown kind {:?}", doc.kind)))?;
    let n_settings = doc.data.len();
    let n_outcomes = doc.data.first().map_or(0, |r| r.len());
    if n_settings == 0 || n_outcomes == 0 {
        return Err(schema("data", "empty data grid"));
    }
    if let Some(x) = doc.data.iter().position(|r| r.len() != n_outcomes) {
        return Err(schema(format!("data[{x}]"), format!("expected {n_outcomes} entries")));
    }
    let single = |what: &str| -> Result<(), DocumentError> {
        if n_settings != 1 {
            return Err(schema("data", format!("{what} documents have a single setting row")));
        }
        Ok(())
    };
    let one = |d: &[usize]| -> Result<usize, DocumentError> {
        match d {
            [x] if *x > 0 => Ok(*x),
            _ => Err(schema("dims", "expected one positive dimension")),
        }
    };
    let two = |d: &[usize]| -> Result<(usize, usize), DocumentError> {
        match d {
            [a, b] if *a > 0 && *b > 0 => Ok((*a, *b)),
            _ => Err(schema("dims", "expected two positive dimensions")),
        }
    };
    Ok(match class {
        DeviceClass::State => {
            single("state")?;
            if n_outcomes != 1 {
                return Err(schema("data[0]", "state documents have a single matrix"));
            }
            match doc.dims.len() {
                2 => DeviceShape::bipartite_state(two(&doc.dims)?),
                _ => DeviceShape::state(one(&doc.dims)?),
            }
        }
        DeviceClass::Ensemble => {
            single("ensemble")?;
            DeviceShape::ensemble(one(&doc.dims)?, n_outcomes)
        }
        DeviceClass::StateAssemblage => DeviceShape::state_assemblage(one(&doc.dims)?, n_outcomes, n_settings),
        DeviceClass::Povm => {
            single("povm")?;
            DeviceShape::povm(one(&doc.dims)?, n_outcomes)
        }
        DeviceClass::MeasurementAssemblage => DeviceShape::measurement_assemblage(one(&doc.dims)?, n_outcomes, n_settings),
        DeviceClass::Channel => {
            single("channel")?;
            if n_outcomes != 1 {
                return Err(schema("data[0]", "channel documents have a single Choi matrix"));
            }
            DeviceShape::channel(two(&doc.dims)?)
        }
        DeviceClass::InstrumentSet => DeviceShape::instrument_set(two(&doc.dims)?, n_outcomes, n_settings),
    })
}

/// Converts a parsed document into a device without checking invariants.
pub fn device_from_document(doc: &DeviceDocument) -> Result<Device, DocumentError> {
    if doc.schema_version != SCHEMA_VERSION {
        return Err(schema("schema_version", format!("unsupported version {:?}", doc.schema_version)));
    }
    let shape = shape_for(doc)?;
    let mut blocks = Vec::with_capacity(shape.n_blocks());
    for (x, row) in doc.data.iter().enumerate() {
        for (i, m) in row.iter().enumerate() {
            blocks.push(matrix_from_json(m, shape.dim, &format!("data[{x}][{i}]"))?);
        }
    }
    match (shape.class, &doc.probabilities) {
        (DeviceClass::Ensemble, Some(p)) => {
            if p.len() != blocks.len() {
                return Err(schema("probabilities", format!("expected {} entries", blocks.len())));
            }
            Ok(Device::Ensemble(Ensemble { elements: p.iter().copied().zip(blocks).collect() }))
        }
        (DeviceClass::Ensemble, None) => Err(schema("probabilities", "ensemble documents need probabilities")),
        (_, Some(_)) => Err(schema("probabilities", "only ensemble documents carry probabilities")),
        (_, None) => Device::from_blocks(&shape, blocks).map_err(|e| schema("data", e.to_string())),
    }
}

pub fn parse_device_document(text: &str) -> Result<DeviceDocument, DocumentError> {
    serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            schema(format!("line {} column {}", e.line(), e.column()), e.to_string())
        } else {
            DocumentError::Malformed(e)
        }
    })
}

/// Parses and validates a device document.
pub fn parse_device(text: &str) -> Result<Device, DocumentError> {
    let d = device_from_document(&parse_device_document(text)?)?;
    let v = d.validate();
    if !v.is_empty() {
        return Err(DocumentError::Invariant(v));
    }
    Ok(d)
}

pub fn device_to_document(d: &Device) -> DeviceDocument {
    let shape = d.shape();
    let dims = match shape.dims {
        Some((a, b)) => vec![a, b],
        None => vec![shape.dim],
    };
    let (probabilities, blocks) = match d {
        Device::Ensemble(e) => {
            (Some(e.elements.iter().map(|(p, _)| *p).collect()), e.elements.iter().map(|(_, r)| r.clone()).collect())
        }
        _ => (None, d.blocks()),
    };
    let data = blocks.chunks(shape.n_outcomes).map(|row| row.iter().map(matrix_to_json).collect()).collect();
    DeviceDocument {
        schema_version: SCHEMA_VERSION.into(),
        kind: shape.class.tag().into(),
        dims,
        probabilities,
        data,
        labels: None,
    }
}

pub fn serialize_device(d: &Device) -> String {
    to_json(&device_to_document(d))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("documents serialize")
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelledMatrix {
    pub outcome: usize,
    pub setting: usize,
    pub matrix: Matrix,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightDocument {
    pub schema_version: String,
    pub free_set: String,
    pub weight: f64,
    pub primal_value: f64,
    pub witness_value: f64,
    pub gap: f64,
    pub relaxed: bool,
    pub iterations: usize,
    pub witness: Vec<LabelledMatrix>,
    pub free_component: Option<DeviceDocument>,
    pub outside_component: Option<DeviceDocument>,
}

impl From<&WeightResult> for WeightDocument {
    fn from(r: &WeightResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            free_set: r.free_set.clone(),
            weight: r.weight,
            primal_value: r.primal_value,
            witness_value: r.witness_value,
            gap: r.gap,
            relaxed: r.relaxed,
            iterations: r.iterations,
            witness: r
                .witness
                .iter()
                .map(|((i, x), y)| LabelledMatrix { outcome: *i, setting: *x, matrix: matrix_to_json(y) })
                .collect(),
            free_component: r.free_component.as_ref().map(device_to_document),
            outside_component: r.outside_component.as_ref().map(device_to_document),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightedState {
    pub p: f64,
    pub state: Matrix,
}

#[derive(Clone, Debug, Serialize)]
pub struct RewardBlock {
    pub outcome: usize,
    pub setting: usize,
    pub omega: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GameDocument {
    pub schema_version: String,
    pub kind: String,
    pub dims: Vec<usize>,
    pub ensembles: Vec<Vec<WeightedState>>,
    pub effects: Vec<Vec<Matrix>>,
    pub rewards: Vec<RewardBlock>,
    pub canonical: bool,
}

impl From<&ExclusionGame> for GameDocument {
    fn from(g: &ExclusionGame) -> Self {
        let s = &g.shape;
        Self {
            schema_version: SCHEMA_VERSION.into(),
            kind: s.class.tag().into(),
            dims: s.dims.map_or(vec![s.dim], |(a, b)| vec![a, b]),
            ensembles: g
                .ensembles
                .iter()
                .map(|e| e.iter().map(|(p, r)| WeightedState { p: *p, state: matrix_to_json(r) }).collect())
                .collect(),
            effects: g.povms.iter().map(|p| p.iter().map(matrix_to_json).collect()).collect(),
            rewards: s
                .labels()
                .into_iter()
                .zip(&g.rewards)
                .map(|((i, x), w)| RewardBlock {
                    outcome: i,
                    setting: x,
                    omega: (0..w.nrows()).map(|r| w.row(r).iter().copied().collect()).collect(),
                })
                .collect(),
            canonical: g.canonical,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateDocument {
    pub e_blocks: Vec<Matrix>,
    pub norm: f64,
    pub max_weight: f64,
}

impl CertificateDocument {
    pub fn new(c: &ComponentCertificate) -> crate::Result<Self> {
        Ok(Self { e_blocks: c.e_blocks.iter().map(matrix_to_json).collect(), norm: c.norm()?, max_weight: c.max_weight })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyticDocument {
    pub weight: f64,
    pub distribution: Vec<f64>,
}

impl From<&AnalyticTrivialWeight> for AnalyticDocument {
    fn from(a: &AnalyticTrivialWeight) -> Self {
        Self { weight: a.weight, distribution: a.distribution.clone() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtremalityDocument {
    pub extreme: bool,
    pub nullspace_dim: usize,
}

impl From<Extremality> for ExtremalityDocument {
    fn from(e: Extremality) -> Self {
        Self { extreme: e.extreme, nullspace_dim: e.nullspace_dim }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MembershipDocument {
    pub inside: bool,
    pub free_set: String,
    pub relaxed: bool,
}

impl MembershipDocument {
    pub fn new(m: Membership, free_set: &str, relaxed: bool) -> Self {
        Self { inside: m == Membership::Inside, free_set: free_set.into(), relaxed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{random_device, Povm};
    use proptest::prelude::*;

    const MIXED: &str = r#"{"schema_version":"1.0","kind":"state","dims":[2],
        "data":[[[[[0.5,0.0],[0.0,0.0]],[[0.0,0.0],[0.5,0.0]]]]]}"#;

    #[test]
    fn minimal_state() {
        match parse_device(MIXED).unwrap() {
            Device::State(s) => assert!(s.rho.max_abs_diff(&HermitianBlock::identity(2).scale(0.5)) < 1e-15),
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn error_kinds_are_distinguishable() {
        assert!(matches!(parse_device("{not json"), Err(DocumentError::Malformed(_))));
        assert!(matches!(parse_device(r#"{"kind":"state"}"#), Err(DocumentError::Schema { .. })));
        let non_herm = r#"{"schema_version":"1.0","kind":"povm","dims":[2],
            "data":[[[[[1.0,0.0],[0.3,0.0]],[[0.0,0.0],[0.0,0.0]]],[[[0.0,0.0],[0.0,0.0]],[[0.0,0.0],[1.0,0.0]]]]]}"#;
        match parse_device(non_herm) {
            Err(DocumentError::Schema { path, .. }) => assert_eq!(path, "data[0][0]"),
            other => panic!("{other:?}"),
        }
        let over = r#"{"schema_version":"1.0","kind":"povm","dims":[2],
            "data":[[[[[1.1,0.0],[0.0,0.0]],[[0.0,0.0],[0.0,0.0]]],[[[0.0,0.0],[0.0,0.0]],[[0.0,0.0],[1.0,0.0]]]]]}"#;
        match parse_device(over) {
            Err(e @ DocumentError::Invariant(_)) => assert!(e.to_string().contains("sum ≠ identity, residual 0.1"), "{e}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sharp_povm_document() {
        let d = Device::Povm(Povm::sharp(&HermitianBlock::pauli_x()));
        let text = serialize_device(&d);
        assert_eq!(parse_device(&text).unwrap(), d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn roundtrip_is_exact(seed in 0u64..1_000_000, class in 0usize..7) {
            let shape = [
                DeviceShape::bipartite_state((2, 2)),
                DeviceShape::ensemble(3, 2),
                DeviceShape::state_assemblage(2, 3, 2),
                DeviceShape::povm(3, 3),
                DeviceShape::measurement_assemblage(2, 2, 3),
                DeviceShape::channel((2, 3)),
                DeviceShape::instrument_set((2, 2), 2, 2),
            ][class];
            let d = random_device(&shape, seed).unwrap();
            let text = serialize_device(&d);
            let back = parse_device(&text).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(serialize_device(&back), text);
        }
    }
}
