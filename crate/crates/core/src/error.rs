use thiserror::Error;

use crate::devices::Violation;
use crate::solver::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian: entries ({row},{col}) and ({col},{row}) differ by {deviation:e}")]
    NotHermitian { row: usize, col: usize, deviation: f64 },

    #[error("matrix is not an isometry: |J*J - 1| = {residual:e}")]
    NotIsometry { residual: f64 },

    #[error("operator has eigenvalue {value:e} below the PSD tolerance")]
    NegativeEigenvalue { value: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid device: {}", format_violations(.0))]
    InvalidDevice(Vec<Violation>),

    #[error("incompatible input: {0}")]
    Incompatible(String),

    #[error("solver did not reach optimality (status {0:?})")]
    Solver(SolveStatus),

    #[error("decomposition residual {residual:e} exceeds tolerance")]
    Reconstruction { residual: f64 },

    #[error("support violation at index {index}: component leaves the support of the device")]
    SupportViolation { index: usize },

    #[error("not a component: {0}")]
    NotAComponent(String),

    #[error("weight {lambda} exceeds the maximal component weight {max}")]
    WeightTooLarge { lambda: f64, max: f64 },

    #[error("degenerate game: payoff range {range:e} over the device class is zero")]
    DegenerateGame { range: f64 },

    #[error("witness decomposition residual {residual:e} exceeds tolerance")]
    WitnessDecomposition { residual: f64 },

    #[error("game normalization fault: free minimum payoff {den:e} vanishes while weight is {weight}")]
    GameNormalization { den: f64, weight: f64 },

    #[error("strategy enumeration of {count} exceeds the guard {limit}")]
    TooManyStrategies { count: f64, limit: usize },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
