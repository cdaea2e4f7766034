//! Small-strain plane-stress finite elements: Q4 kinematics, J2 plasticity
//! and an incremental Newton-Raphson driver with Abaqus-style relative
//! convergence controls.

pub mod element;
pub mod material;
pub mod mesh;
pub mod model;
pub mod sparse;

pub use material::{return_mapping, HardeningCurve, Material, PlasticState, StressUpdate};
pub use mesh::Mesh;
pub use model::{
    FeModel, InterfaceDofs, InterfaceDrive, InterfaceTie, NewtonControls, Prescribed, SolveReport,
    Tie,
};
pub use sparse::SparseMatrix;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FemError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("singular system at reduced equation {pivot}")]
    Singular { pivot: usize },
    #[error("return mapping failed: {0}")]
    ReturnMapping(String),
    #[error(
        "Newton did not converge in {iterations} iterations \
         (residual ratio {residual_ratio:.3e}, correction ratio {correction_ratio:.3e})"
    )]
    NotConverged {
        iterations: usize,
        residual_ratio: f64,
        correction_ratio: f64,
    },
    #[error("state error: {0}")]
    State(String),
}

/// DOF index of component `comp` (0 = x, 1 = y) of `node`.
#[inline]
pub fn dof(node: usize, comp: usize) -> usize {
    2 * node + comp
}
