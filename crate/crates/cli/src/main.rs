//! `cw`: convex weights, witness games and POVM component analysis from the
//! command line. Every invocation prints one JSON document on stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convex_weight::devices::{Device, Povm};
use convex_weight::dilation::{
    certificate_for_component, is_extreme, naimark_dilation, trivial_bound_grid_search, trivial_weight_analytic,
};
use convex_weight::free_sets::{membership_check, FreeSetKind, FreeSetSpec};
use convex_weight::games::{canonicalize, game_from_witness, verify_ratio_seeded};
use convex_weight::io::{
    matrix_to_json, parse_device, to_json, AnalyticDocument, CertificateDocument, DocumentError, ExtremalityDocument,
    GameDocument, MembershipDocument, WeightDocument,
};
use convex_weight::weight::compute_weight;
use convex_weight::Error;
use serde_json::{json, Value};

const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

#[derive(Parser)]
#[command(name = "cw", version, about = "Convex weight of quantum devices")]
struct Cli {
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON result to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weight of a device relative to a free set, with witness and components.
    Weight {
        #[arg(long)]
        device: PathBuf,
        #[arg(long = "free-set")]
        free_set: String,
    },
    /// Exclusion game built from the optimal witness.
    Game {
        #[arg(long)]
        device: PathBuf,
        #[arg(long = "free-set")]
        free_set: String,
        /// Shift and rescale rewards so the payoff spans [0, 1] over the device class.
        #[arg(long)]
        canonical: bool,
    },
    /// Checks the payoff ratio identity at the witness game.
    VerifyRatio {
        #[arg(long)]
        device: PathBuf,
        #[arg(long = "free-set")]
        free_set: String,
    },
    /// Certificate of a convex component of a POVM.
    Components {
        #[arg(long)]
        povm: PathBuf,
        #[arg(long)]
        component: PathBuf,
    },
    /// Closed-form trivial weight of a POVM, or the grid bound for a qubit ensemble.
    Analytic {
        #[arg(long, conflicts_with = "ensemble", required_unless_present = "ensemble")]
        povm: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Extremality of a POVM in the convex set of POVMs.
    Extreme {
        #[arg(long)]
        povm: PathBuf,
    },
    /// Whether a device lies in a free set.
    Membership {
        #[arg(long)]
        device: PathBuf,
        #[arg(long = "free-set")]
        free_set: String,
    },
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, kind: "validation", message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solver(_) | Error::NumericalFailure(_) => Self { code: EXIT_SOLVER, kind: "solver", message: e.to_string() },
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<DocumentError> for Failure {
    fn from(e: DocumentError) -> Self {
        Self::validation(e.to_string())
    }
}

fn load(path: &Path) -> Result<Device, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    parse_device(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn load_povm(path: &Path) -> Result<Povm, Failure> {
    match load(path)? {
        Device::Povm(p) => Ok(p),
        other => Err(Failure::validation(format!("{}: expected a povm, found {}", path.display(), other.class().tag()))),
    }
}

fn free_set(kind: &str, d: &Device) -> Result<FreeSetSpec, Failure> {
    let k = FreeSetKind::from_name(kind).ok_or_else(|| Failure::validation(format!("unknown free set {kind:?}")))?;
    Ok(FreeSetSpec::for_device(k, d)?)
}

fn value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("documents serialize")
}

/// Result document and whether verification passed.
fn run(cli: &Cli) -> Result<(Value, bool), Failure> {
    Ok(match &cli.command {
        Command::Weight { device, free_set: k } => {
            let d = load(device)?;
            let f = free_set(k, &d)?;
            (value(&WeightDocument::from(&compute_weight(&d, &f)?)), true)
        }
        Command::Game { device, free_set: k, canonical } => {
            let d = load(device)?;
            let f = free_set(k, &d)?;
            let r = compute_weight(&d, &f)?;
            let mut g = game_from_witness(&r.witness_blocks(), &d.shape())?;
            if *canonical {
                g = canonicalize(&g)?;
            }
            (value(&GameDocument::from(&g)), true)
        }
        Command::VerifyRatio { device, free_set: k } => {
            let d = load(device)?;
            let f = free_set(k, &d)?;
            let r = compute_weight(&d, &f)?;
            let report = verify_ratio_seeded(&d, &f, &r, cli.seed)?;
            (value(&report), report.pass)
        }
        Command::Components { povm, component } => {
            let m = load_povm(povm)?;
            let m1 = load_povm(component)?;
            let cert = certificate_for_component(&naimark_dilation(&m)?, &m1)?;
            (value(&CertificateDocument::new(&cert)?), true)
        }
        Command::Analytic { povm: Some(p), .. } => (value(&AnalyticDocument::from(&trivial_weight_analytic(&load_povm(p)?)?)), true),
        Command::Analytic { ensemble: Some(p), .. } => {
            let e = match load(p)? {
                Device::Ensemble(e) => e,
                other => return Err(Failure::validation(format!("expected an ensemble, found {}", other.class().tag()))),
            };
            let (bound, target) = trivial_bound_grid_search(&e, 20, 40)?;
            (json!({ "bound": bound, "target": matrix_to_json(&target), "grid": [20, 40] }), true)
        }
        Command::Analytic { .. } => return Err(Failure::validation("analytic needs --povm or --ensemble")),
        Command::Extreme { povm } => (value(&ExtremalityDocument::from(is_extreme(&load_povm(povm)?)?)), true),
        Command::Membership { device, free_set: k } => {
            let d = load(device)?;
            let f = free_set(k, &d)?;
            let m = membership_check(&d, &f)?;
            (value(&MembershipDocument::new(m, f.name(), f.is_relaxed())), true)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (doc, code) = match run(&cli) {
        Ok((doc, true)) => (doc, 0),
        Ok((doc, false)) => {
            eprintln!("verification failed");
            (doc, EXIT_VERIFICATION)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            (json!({ "error": { "kind": f.kind, "message": f.message }, "exit_code": f.code }), f.code)
        }
    };
    let text = to_json(&doc);
    println!("{text}");
    if let Some(path) = &cli.out {
        if let Err(e) = std::fs::write(path, format!("{text}\n")) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    ExitCode::from(code)
}
