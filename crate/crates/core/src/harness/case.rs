use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::accel::AcceleratorConfig;
use crate::coupling::{CouplingControls, IncrementationPolicy};
use crate::fem::{Material, NewtonControls};

/// Declarative case description, read from TOML. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Load-factor target of each step; loads and prescribed displacements
    /// scale with the load factor.
    #[serde(default = "default_steps")]
    pub steps: Vec<f64>,
    /// Out-of-plane thickness in mm.
    #[serde(default = "default_thickness")]
    pub thickness: f64,
    pub global: GlobalSpec,
    #[serde(default)]
    pub patches: Vec<PatchSpec>,
    #[serde(default)]
    pub dirichlet: Vec<DirichletSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    /// Inner Newton controls of every model.
    #[serde(default)]
    pub newton: NewtonControls,
    #[serde(default)]
    pub coupling: CouplingControls,
    #[serde(default)]
    pub incrementation: IncrementationPolicy,
    #[serde(default)]
    pub accelerator: AcceleratorConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_steps() -> Vec<f64> {
    vec![1.0]
}

fn default_thickness() -> f64 {
    1.0
}

/// Structured global grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalSpec {
    #[serde(default)]
    pub origin: [f64; 2],
    /// Width and height in mm.
    pub size: [f64; 2],
    /// Elements along x and y.
    pub elements: [usize; 2],
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub name: String,
    /// `[x_min, y_min, x_max, y_max]` on global element facets.
    pub region: [f64; 4],
    #[serde(default = "default_refine")]
    pub refine: usize,
    /// Defaults to the global material.
    #[serde(default)]
    pub material: Option<Material>,
    #[serde(default)]
    pub hole: Option<HoleSpec>,
    /// When set, only elements whose centroid lies within this distance of
    /// the region centre get the patch material; the others keep the global
    /// material.
    #[serde(default)]
    pub material_radius: Option<f64>,
}

fn default_refine() -> usize {
    1
}

/// Centred circular hole meshed with an O-grid; needs a square region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSpec {
    pub radius: f64,
    pub radial_layers: usize,
}

/// Prescribed displacement components on a boundary node set
/// (`bottom`, `top`, `left`, `right`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletSpec {
    pub set: String,
    #[serde(default)]
    pub ux: Option<f64>,
    #[serde(default)]
    pub uy: Option<f64>,
}

/// Nodal force applied to every node of a boundary set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub set: String,
    #[serde(default)]
    pub fx: f64,
    #[serde(default)]
    pub fy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
}

pub const BUILTIN_CASES: [(&str, &str); 4] = [
    (
        "holed_plate_analog",
        include_str!("../../cases/holed_plate_analog.toml"),
    ),
    ("stiff_patch", include_str!("../../cases/stiff_patch.toml")),
    (
        "linear_patch",
        include_str!("../../cases/linear_patch.toml"),
    ),
    (
        "identical_patch",
        include_str!("../../cases/identical_patch.toml"),
    ),
];

impl CaseFile {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Case(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Case(e.to_string()))
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN_CASES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml_str(text).expect("bundled case parses"))
    }

    /// Reads `spec` as a file path, falling back to a bundled case name.
    pub fn load(spec: &str) -> Result<Self, HarnessError> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
            return Self::from_toml_str(&text);
        }
        Self::builtin(spec).ok_or_else(|| {
            let names: Vec<&str> = BUILTIN_CASES.iter().map(|(n, _)| *n).collect();
            HarnessError::Case(format!(
                "{spec:?} is neither a case file nor a bundled case ({})",
                names.join(", ")
            ))
        })
    }
}
