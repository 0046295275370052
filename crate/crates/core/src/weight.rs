//! Convex weight of a device with respect to a free set.
//!
//! With `N` the total trace of the device blocks,
//!
//! ```text
//! 1 − W = max (1/N) Σ_k tr D̂_k   s.t.  D̂_k ≼ D_k,  D̂ ∈ C_F
//!       = min Σ_k ⟨D_k, Y_k⟩     s.t.  Y ≽ 0,  Σ_k ⟨T_k, Y_k⟩ ≥ 1 ∀ T ∈ F
//! ```

use crate::devices::Device;
use crate::error::{Error, Result};
use crate::free_sets::{membership_check_with, FreeSetSpec, Membership};
use crate::linalg::HermitianBlock;
use crate::solver::{ConeProgram, SolveResult, SolverSettings};

/// Weights within this distance of 0 or 1 are snapped to the endpoint.
pub const DEGENERATE_TOL: f64 = 1e-9;

/// Tolerance used when validating the extracted components.
pub const COMPONENT_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct WeightResult {
    pub weight: f64,
    /// Witness `Y_k` labelled `(outcome, setting)` like the device blocks.
    pub witness: Vec<((usize, usize), HermitianBlock)>,
    /// Free part `D̂ = (1 − W) D_F` as computed.
    pub free_blocks: Vec<HermitianBlock>,
    pub free_component: Option<Device>,
    pub outside_component: Option<Device>,
    /// Optimal value of the primal, `1 − W` before snapping.
    pub primal_value: f64,
    /// `Σ_k ⟨D_k, Y_k⟩`.
    pub witness_value: f64,
    pub gap: f64,
    pub relaxed: bool,
    pub iterations: usize,
    pub free_set: String,
}

impl WeightResult {
    pub fn witness_blocks(&self) -> Vec<HermitianBlock> {
        self.witness.iter().map(|(_, y)| y.clone()).collect()
    }
}

/// Program assembled for a device and free set; reused by game routines.
pub(crate) struct WeightProgram {
    pub program: ConeProgram,
    pub aux_ids: Vec<usize>,
    pub bundle: crate::free_sets::ConeBundle,
}

pub(crate) fn build_program(d: &Device, f: &FreeSetSpec) -> Result<WeightProgram> {
    if d.shape() != f.shape {
        return Err(Error::Incompatible(format!(
            "device shape {:?} differs from free-set shape {:?}",
            d.shape(),
            f.shape
        )));
    }
    let bundle = f.cone_constraints()?;
    let mut program = ConeProgram::new();
    let aux_ids = bundle.install(&mut program)?;
    let n = f.shape.normalization();
    for (k, block) in d.blocks().into_iter().enumerate() {
        let terms = bundle.terms_for(k, &aux_ids);
        let dim = block.dim();
        for (b, m) in &terms {
            program.add_objective(*b, m.adjoint_apply(&HermitianBlock::identity(dim))?.scale(1.0 / n))?;
        }
        program.add_dominance(terms, block)?;
    }
    Ok(WeightProgram { program, aux_ids, bundle })
}

pub fn compute_weight(d: &Device, f: &FreeSetSpec) -> Result<WeightResult> {
    compute_weight_with(d, f, &SolverSettings::from_env())
}

pub fn compute_weight_with(d: &Device, f: &FreeSetSpec, settings: &SolverSettings) -> Result<WeightResult> {
    let violations = d.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidDevice(violations));
    }
    let wp = build_program(d, f)?;
    let sol: SolveResult = wp.program.solve_with(settings)?.into_optimal()?;
    let aux: Vec<HermitianBlock> = wp.aux_ids.iter().map(|&i| sol.primal_blocks[i].clone()).collect();
    let free_blocks = wp.bundle.image(&aux)?;
    let blocks = d.blocks();
    let shape = d.shape();

    let opt = sol.value;
    let raw = 1.0 - opt;
    let weight = if raw <= DEGENERATE_TOL {
        0.0
    } else if raw >= 1.0 - DEGENERATE_TOL {
        1.0
    } else {
        raw
    };

    let free_component = if weight < 1.0 {
        let scaled = free_blocks.iter().map(|b| b.scale(1.0 / (1.0 - weight))).collect();
        Some(if weight == 0.0 { d.clone() } else { Device::from_blocks(&shape, scaled)? })
    } else {
        None
    };
    let outside_component = if weight > 0.0 {
        if weight == 1.0 {
            Some(d.clone())
        } else {
            let diff = blocks.iter().zip(&free_blocks).map(|(a, b)| (a - b).scale(1.0 / weight)).collect();
            Some(Device::from_blocks(&shape, diff)?)
        }
    } else {
        None
    };

    let witness_value = blocks.iter().zip(&sol.dual_blocks).map(|(b, y)| b.inner(y)).sum();
    let labels = shape.labels();
    Ok(WeightResult {
        weight,
        witness: labels.into_iter().zip(sol.dual_blocks).collect(),
        free_blocks,
        free_component,
        outside_component,
        primal_value: opt,
        witness_value,
        gap: sol.gap,
        relaxed: wp.bundle.relaxed,
        iterations: sol.iterations,
        free_set: f.name().to_string(),
    })
}

/// `D = (1−λ) D_F + λ D̃` with both parts present only when their
/// coefficient is nonzero.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub free_coefficient: f64,
    pub free: Option<Device>,
    pub weight: f64,
    pub outside: Option<Device>,
}

/// Validates the decomposition carried by `r` against `d` and `f`.
pub fn optimal_decomposition(r: &WeightResult, d: &Device, f: &FreeSetSpec) -> Result<Decomposition> {
    let blocks = d.blocks();
    let lam = r.weight;
    let zero = |n: usize| vec![HermitianBlock::zeros(d.shape().dim); n];
    let free_part = r.free_component.as_ref().map_or(zero(blocks.len()), |c| c.blocks());
    let out_part = r.outside_component.as_ref().map_or(zero(blocks.len()), |c| c.blocks());
    let mut residual: f64 = 0.0;
    for ((b, fp), op) in blocks.iter().zip(&free_part).zip(&out_part) {
        let rec = &fp.scale(1.0 - lam) + &op.scale(lam);
        residual = residual.max(rec.max_abs_diff(b));
    }
    if residual > COMPONENT_TOL {
        return Err(Error::Reconstruction { residual });
    }
    for c in [&r.free_component, &r.outside_component].into_iter().flatten() {
        let v = c.validate_with_tol(COMPONENT_TOL);
        if !v.is_empty() {
            return Err(Error::InvalidDevice(v));
        }
    }
    if let Some(fc) = &r.free_component {
        if lam > 0.0 && membership_check_with(fc, f, &SolverSettings::from_env())? != Membership::Inside {
            return Err(Error::NotAComponent("free component is not in the free set".into()));
        }
    }
    Ok(Decomposition {
        free_coefficient: 1.0 - lam,
        free: r.free_component.clone(),
        weight: lam,
        outside: r.outside_component.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{noisy_mix, random_device, ChannelChoi, DeviceShape, MeasurementAssemblage, Povm};
    use crate::free_sets::FreeSetKind;
    use proptest::prelude::*;

    fn noisy_z(eta: f64) -> Device {
        let z = Device::Povm(Povm::sharp(&HermitianBlock::pauli_z()));
        let noise = Device::Povm(Povm::trivial(&[0.5, 0.5], 2));
        noisy_mix(&z, eta, &noise).unwrap()
    }

    fn spec(kind: FreeSetKind, d: &Device) -> FreeSetSpec {
        FreeSetSpec::for_device(kind, d).unwrap()
    }

    #[test]
    fn noisy_povm_weight_is_eta() {
        let d = noisy_z(0.5);
        let r = compute_weight(&d, &spec(FreeSetKind::TrivialPovm, &d)).unwrap();
        assert!((r.weight - 0.5).abs() < 1e-6);
        assert!((r.witness_value - (1.0 - r.weight)).abs() < 1e-6);
        let f = spec(FreeSetKind::TrivialPovm, &d);
        let dec = optimal_decomposition(&r, &d, &f).unwrap();
        // Optimal trivial component has p(i) ∝ λ_min(M_i) = (1/2, 1/2).
        let fc = dec.free.unwrap().blocks();
        for b in &fc {
            assert!(b.max_abs_diff(&HermitianBlock::identity(2).scale(0.5)) < 1e-6);
        }
    }

    #[test]
    fn free_device_has_zero_weight() {
        let d = Device::Povm(Povm::trivial(&[0.2, 0.8], 2));
        let f = spec(FreeSetKind::TrivialPovm, &d);
        let r = compute_weight(&d, &f).unwrap();
        assert_eq!(r.weight, 0.0);
        assert!(r.outside_component.is_none());
        let dec = optimal_decomposition(&r, &d, &f).unwrap();
        assert_eq!(dec.free_coefficient, 1.0);
    }

    #[test]
    fn mub_pair_has_weight_one() {
        let z = Povm::sharp(&HermitianBlock::pauli_z());
        let x = Povm::sharp(&HermitianBlock::pauli_x());
        let d = Device::MeasurementAssemblage(MeasurementAssemblage { effects: vec![z.effects, x.effects] });
        let f = spec(FreeSetKind::JointlyMeasurable, &d);
        let r = compute_weight(&d, &f).unwrap();
        assert!((r.weight - 1.0).abs() < 1e-6);
        let dec = optimal_decomposition(&r, &d, &f).unwrap();
        assert!(dec.free.is_none());
        assert_eq!(dec.outside.unwrap(), d);
    }

    #[test]
    fn identity_channel_is_maximally_non_eb() {
        let d = Device::Channel(ChannelChoi::identity(2));
        let r = compute_weight(&d, &spec(FreeSetKind::EntanglementBreakingPpt, &d)).unwrap();
        assert!((r.weight - 1.0).abs() < 1e-6);
        assert!(!r.relaxed);
    }

    #[test]
    fn witness_is_psd_and_labelled() {
        let d = random_device(&DeviceShape::measurement_assemblage(2, 2, 2), 9).unwrap();
        let r = compute_weight(&d, &spec(FreeSetKind::JointlyMeasurable, &d)).unwrap();
        assert_eq!(r.witness.iter().map(|(l, _)| *l).collect::<Vec<_>>(), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        for (_, y) in &r.witness {
            assert!(y.min_eigenvalue().unwrap() >= -1e-9);
        }
    }

    #[test]
    fn rejects_invalid_devices() {
        let bad = Device::Povm(Povm { effects: vec![HermitianBlock::identity(2), HermitianBlock::identity(2)] });
        let f = FreeSetSpec::new(FreeSetKind::TrivialPovm, DeviceShape::povm(2, 2)).unwrap();
        assert!(matches!(compute_weight(&bad, &f), Err(Error::InvalidDevice(_))));
    }

    fn relabel(d: &Device, map: &[usize], n_out: usize) -> Device {
        let Device::MeasurementAssemblage(m) = d else { unreachable!() };
        let dim = d.shape().dim;
        let effects = m
            .effects
            .iter()
            .map(|povm| {
                let mut out = vec![HermitianBlock::zeros(dim); n_out];
                for (i, e) in povm.iter().enumerate() {
                    out[map[i]] = &out[map[i]] + e;
                }
                out
            })
            .collect();
        Device::MeasurementAssemblage(MeasurementAssemblage { effects })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn duality_and_reconstruction(seed in 0u64..5000) {
            let d = random_device(&DeviceShape::state_assemblage(2, 2, 2), seed).unwrap();
            let f = spec(FreeSetKind::Unsteerable, &d);
            let r = compute_weight(&d, &f).unwrap();
            prop_assert!(r.gap <= 1e-6);
            prop_assert!((r.witness_value - (1.0 - r.weight)).abs() <= 1e-6);
            prop_assert!(optimal_decomposition(&r, &d, &f).is_ok());
        }

        #[test]
        fn relabeling_never_increases_jm_weight(seed in 0u64..5000, a in 0usize..2, b in 0usize..2, c in 0usize..2) {
            let d = random_device(&DeviceShape::measurement_assemblage(2, 3, 2), seed).unwrap();
            let r = compute_weight(&d, &spec(FreeSetKind::JointlyMeasurable, &d)).unwrap();
            let e = relabel(&d, &[a, b, c], 2);
            let re = compute_weight(&e, &spec(FreeSetKind::JointlyMeasurable, &e)).unwrap();
            prop_assert!(re.weight <= r.weight + 1e-6);
        }
    }
}
