//! Helpers for running `cw` and comparing its output with golden files.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

/// Absolute tolerance for numeric fields.
pub const TOL: f64 = 1e-6;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Runs `cw` with fixture-relative `.json` arguments; returns the exit code
/// and the parsed stdout.
pub fn run(args: &[&str]) -> Result<(i32, Value), String> {
    let dir = fixtures();
    let resolved: Vec<String> =
        args.iter().map(|a| if a.ends_with(".json") { dir.join(a).display().to_string() } else { a.to_string() }).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_cw"))
        .args(&resolved)
        .env_remove("CW_SOLVER_TOL")
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let json: Value = serde_json::from_str(&stdout).map_err(|e| format!("stdout is not JSON ({e}): {stdout}"))?;
    Ok((out.status.code().ok_or("terminated by signal")?, json))
}

pub fn compare(path: &str, a: &Value, b: &Value) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= TOL {
                Ok(())
            } else {
                Err(format!("{path}: {x} != {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Err(format!("{path}: length {} != {}", x.len(), y.len()));
            }
            x.iter().zip(y).enumerate().try_for_each(|(i, (u, v))| compare(&format!("{path}[{i}]"), u, v))
        }
        (Value::Object(x), Value::Object(y)) => {
            let kx: Vec<_> = x.keys().collect();
            let ky: Vec<_> = y.keys().collect();
            if kx != ky {
                return Err(format!("{path}: keys {kx:?} != {ky:?}"));
            }
            x.iter().try_for_each(|(k, u)| compare(&format!("{path}.{k}"), u, &y[k]))
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{path}: {a} != {b}")),
    }
}

/// Compares `{exit_code, stdout}` with `golden/<name>.json`, or rewrites
/// the file when `CW_UPDATE_GOLDEN` is set.
pub fn check_golden(name: &str, code: i32, out: &Value) -> Result<(), String> {
    let path = fixtures().join("golden").join(format!("{name}.json"));
    let record = serde_json::json!({ "exit_code": code, "stdout": out });
    if std::env::var_os("CW_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&record).unwrap() + "\n").map_err(|e| e.to_string())?;
        return Ok(());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let golden: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    compare(name, &record, &golden)
}

/// Golden cases covering every subcommand: `(name, args, expected exit code)`.
pub const GOLDEN_CASES: &[(&str, &[&str], i32)] = &[
    ("weight_trivial", &["weight", "--device", "povm_trivial.json", "--free-set", "trivial-povm"], 0),
    ("weight_identity_channel", &["weight", "--device", "channel_identity.json", "--free-set", "eb-ppt"], 0),
    ("weight_invalid", &["weight", "--device", "povm_invalid_sum.json", "--free-set", "trivial-povm"], 2),
    ("game_noisy", &["game", "--device", "povm_noisy_half.json", "--free-set", "trivial-povm"], 0),
    ("game_noisy_canonical", &["game", "--device", "povm_noisy_half.json", "--free-set", "trivial-povm", "--canonical"], 0),
    ("verify_ratio_noisy", &["verify-ratio", "--device", "povm_noisy_half.json", "--free-set", "trivial-povm", "--seed", "7"], 0),
    ("components_noisy", &["components", "--povm", "povm_noisy_half.json", "--component", "povm_uniform.json"], 0),
    ("analytic_projective", &["analytic", "--povm", "povm_sharp_z.json"], 0),
    ("analytic_ensemble", &["analytic", "--ensemble", "ensemble_noisy.json"], 0),
    ("extreme_sharp", &["extreme", "--povm", "povm_sharp_z.json"], 0),
    ("membership_mub", &["membership", "--device", "mub_pair.json", "--free-set", "jm"], 0),
];

/// Runs one golden case, checking exit code and output.
pub fn golden_case(name: &str, args: &[&str], code: i32) -> Result<Value, String> {
    let (got, out) = run(args)?;
    if got != code {
        return Err(format!("{name}: exit code {got}, expected {code}"));
    }
    check_golden(name, got, &out)?;
    Ok(out)
}
