//! End-to-end runs of every subcommand against golden JSON outputs.
//!
//! Numbers are compared with an absolute tolerance of 1e-6, everything else
//! exactly. Set `CW_UPDATE_GOLDEN=1` to rewrite the golden files.

mod common;

use common::{check_golden, golden_case, GOLDEN_CASES};
use serde_json::Value;

fn run(args: &[&str]) -> (i32, Value) {
    common::run(args).unwrap()
}

fn golden(name: &str, code: i32, out: &Value) {
    if let Err(msg) = check_golden(name, code, out) {
        panic!("golden mismatch: {msg}");
    }
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {v}"))
}

#[test]
fn analytic_projective() {
    let (code, out) = run(&["analytic", "--povm", "povm_sharp_z.json"]);
    assert_eq!(code, 0);
    assert_eq!(num(&out, "weight"), 1.0);
    golden("analytic_projective", code, &out);
}

#[test]
fn analytic_ensemble_grid() {
    let (code, out) = run(&["analytic", "--ensemble", "ensemble_noisy.json"]);
    assert_eq!(code, 0);
    let b = num(&out, "bound");
    assert!(b > 0.0 && b <= 0.5 + 1e-9);
    golden("analytic_ensemble", code, &out);
}

#[test]
fn weight_of_trivial_povm() {
    let (code, out) = run(&["weight", "--device", "povm_trivial.json", "--free-set", "trivial-povm"]);
    assert_eq!(code, 0);
    assert_eq!(num(&out, "weight"), 0.0);
    golden("weight_trivial", code, &out);
}

#[test]
fn weight_of_identity_channel() {
    let (code, out) = run(&["weight", "--device", "channel_identity.json", "--free-set", "eb-ppt"]);
    assert_eq!(code, 0);
    assert!((num(&out, "weight") - 1.0).abs() < 1e-6);
    assert_eq!(out["relaxed"], Value::Bool(false));
    golden("weight_identity_channel", code, &out);
}

#[test]
fn weight_writes_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("r.json");
    let t = target.display().to_string();
    let (code, out) = run(&["weight", "--device", "povm_noisy_half.json", "--free-set", "trivial-povm", "--out", &t]);
    assert_eq!(code, 0);
    assert!((num(&out, "weight") - 0.5).abs() < 1e-6);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(written, out);
}

#[test]
fn invalid_device_exits_2() {
    let (code, out) = run(&["weight", "--device", "povm_invalid_sum.json", "--free-set", "trivial-povm"]);
    assert_eq!(code, 2);
    assert!(out["error"]["message"].as_str().unwrap().contains("sum ≠ identity, residual 0.1"));
    golden("weight_invalid", code, &out);

    let (code, out) = run(&["extreme", "--povm", "povm_non_hermitian.json"]);
    assert_eq!(code, 2);
    assert!(out["error"]["message"].as_str().unwrap().contains("data[0][0]"));

    let (code, _) = run(&["membership", "--device", "povm_trivial.json", "--free-set", "lhs"]);
    assert_eq!(code, 2);
}

#[test]
fn game_from_witness() {
    let (code, out) = run(&["game", "--device", "povm_noisy_half.json", "--free-set", "trivial-povm"]);
    assert_eq!(code, 0);
    assert_eq!(out["kind"], "povm");
    assert_eq!(out["canonical"], Value::Bool(false));
    golden("game_noisy", code, &out);

    let (code, out) = run(&["game", "--device", "povm_noisy_half.json", "--free-set", "trivial-povm", "--canonical"]);
    assert_eq!(code, 0);
    assert_eq!(out["canonical"], Value::Bool(true));
    golden("game_noisy_canonical", code, &out);
}

#[test]
fn verify_ratio_noisy() {
    let (code, out) = run(&["verify-ratio", "--device", "povm_noisy_half.json", "--free-set", "trivial-povm", "--seed", "7"]);
    assert_eq!(code, 0);
    assert!((num(&out, "weight") - 0.5).abs() < 1e-6);
    assert!((num(&out, "ratio") - 0.5).abs() < 1e-5);
    assert_eq!(out["pass"], Value::Bool(true));
    golden("verify_ratio_noisy", code, &out);
}

#[test]
fn components_certificate() {
    let (code, out) = run(&["components", "--povm", "povm_noisy_half.json", "--component", "povm_uniform.json"]);
    assert_eq!(code, 0);
    assert!((num(&out, "max_weight") - 0.5).abs() < 1e-9);
    golden("components_noisy", code, &out);

    let (code, out) = run(&["components", "--povm", "povm_sharp_z.json", "--component", "povm_uniform.json"]);
    assert_eq!(code, 2);
    assert!(out["error"]["message"].as_str().unwrap().contains("support violation"));
}

#[test]
fn extreme_examples() {
    let (code, out) = run(&["extreme", "--povm", "povm_sharp_z.json"]);
    assert_eq!(code, 0);
    assert_eq!(out["extreme"], Value::Bool(true));
    golden("extreme_sharp", code, &out);

    let (code, out) = run(&["extreme", "--povm", "povm_uniform.json"]);
    assert_eq!(code, 0);
    assert_eq!(out["nullspace_dim"], 4);
}

#[test]
fn membership_examples() {
    let (code, out) = run(&["membership", "--device", "mub_pair.json", "--free-set", "jm"]);
    assert_eq!(code, 0);
    assert_eq!(out["inside"], Value::Bool(false));
    golden("membership_mub", code, &out);

    let (code, out) = run(&["membership", "--device", "povm_trivial.json", "--free-set", "trivial-povm"]);
    assert_eq!(code, 0);
    assert_eq!(out["inside"], Value::Bool(true));
}

#[test]
fn every_golden_case() {
    for (name, args, code) in GOLDEN_CASES {
        if let Err(msg) = golden_case(name, args, *code) {
            panic!("{msg}");
        }
    }
}
