//! Case files, problem assembly, monolithic reference and run artifacts.

pub mod build;
pub mod case;
pub mod reference;
pub mod run;

pub use build::{build_case, build_geometry, validate_case, CaseGeometry, PatchGeometry};
pub use case::{CaseFile, BUILTIN_CASES};
pub use reference::{build_reference, solve_reference, ReferenceModel, ReferenceSolution};
pub use run::{
    compare_accelerators, run_case, ComparisonRow, RunOptions, RunOutcome, RunStatus, RunSummary,
};

use crate::accel::AccelError;
use crate::coupling::CouplingError;
use crate::fem::FemError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Malformed or inconsistent case description.
    #[error("case error: {0}")]
    Case(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error("i/o error: {0}")]
    Io(String),
}
