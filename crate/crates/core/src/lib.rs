//! Convex weight of quantum devices relative to SDP-representable free sets,
//! with dual witnesses, exclusion games and dilation-based component analysis.

pub mod devices;
pub mod dilation;
pub mod error;
pub mod free_sets;
pub mod games;
pub mod io;
pub mod linalg;
pub mod linmap;
pub mod solver;
pub mod weight;

pub use error::{Error, Result};
