use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::element::{gauss_points, GaussPoint, GAUSS_POINTS};
use super::material::{return_mapping, Material, PlasticState};
use super::mesh::Mesh;
use super::sparse::{reverse_cuthill_mckee, Skyline, SparseMatrix};
use super::FemError;

/// Relative Newton convergence controls.
///
/// The residual ratio is the largest free-DOF residual over the average
/// flux, i.e. the mean absolute value of the nonzero internal-force entries
/// averaged over the iterations of the current increment. The correction
/// ratio is the largest prospective Newton correction over the largest
/// displacement increment since the start of the increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonControls {
    pub residual_ratio_tol: f64,
    pub correction_ratio_tol: f64,
    pub max_iterations: usize,
}

impl NewtonControls {
    pub const DEFAULT_RESIDUAL: f64 = 0.005;
    pub const DEFAULT_CORRECTION: f64 = 0.01;

    pub fn relaxed() -> Self {
        Self {
            residual_ratio_tol: 1.0,
            correction_ratio_tol: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.residual_ratio_tol > 0.0 && self.correction_ratio_tol > 0.0) {
            return Err(FemError::InvalidInput(
                "Newton tolerances must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(FemError::InvalidInput(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for NewtonControls {
    fn default() -> Self {
        Self {
            residual_ratio_tol: Self::DEFAULT_RESIDUAL,
            correction_ratio_tol: Self::DEFAULT_CORRECTION,
            max_iterations: 25,
        }
    }
}

/// Prescribed displacement, scaled linearly with the load factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prescribed {
    pub dof: usize,
    pub value: f64,
}

/// Homogeneous multi-point constraint `u[dof] = sum w * u[master]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tie {
    pub dof: usize,
    pub terms: Vec<(usize, f64)>,
}

/// A model DOF slaved to interface entries: `u[dof] = sum w * u_interface[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceTie {
    pub dof: usize,
    pub terms: Vec<(usize, f64)>,
}

/// DOFs through which a model exchanges data with the coupling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterfaceDofs {
    pub dofs: Vec<usize>,
    /// Extra DOFs driven by interpolation of the interface entries (refined
    /// interface edges tied to the coarse trace).
    pub ties: Vec<InterfaceTie>,
}

impl InterfaceDofs {
    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }
}

/// How the interface participates in a solve.
#[derive(Debug, Clone, Copy)]
pub enum InterfaceDrive<'a> {
    None,
    /// Interface (and tied) DOFs prescribed to these values.
    Displacement(&'a [f64]),
    /// Extra nodal forces on the interface DOFs.
    Load(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_ratio: f64,
    pub final_correction_ratio: f64,
    pub converged: bool,
    pub average_flux: f64,
    pub hardening_extrapolated: bool,
}

#[derive(Debug, Clone)]
struct ModelState {
    u: Vec<f64>,
    gauss: Vec<PlasticState>,
    load_factor: f64,
}

#[derive(Debug, Clone)]
struct Trial {
    state: ModelState,
    f_int: Vec<f64>,
    f_ext: Vec<f64>,
    report: SolveReport,
}

/// Reduced numbering for one set of prescribed DOFs.
#[derive(Debug, Clone)]
struct Reduction {
    /// Per full DOF: contributions to reduced equations (empty if prescribed).
    map: Vec<Vec<(usize, f64)>>,
    profile: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DriveKind {
    Free,
    Displacement,
}

/// Result of a pass over the elements.
struct Evaluation {
    f_int: Vec<f64>,
    tangent: Option<SparseMatrix>,
    gauss: Vec<PlasticState>,
    extrapolated: bool,
}

#[derive(Debug, Clone)]
pub struct FeModel {
    mesh: Mesh,
    materials: Vec<Material>,
    element_material: Vec<usize>,
    thickness: f64,
    gauss_points: Vec<[GaussPoint; GAUSS_POINTS]>,
    dirichlet: Vec<Prescribed>,
    external_loads: Vec<f64>,
    constraints: Vec<Tie>,
    interface: InterfaceDofs,
    controls: NewtonControls,
    committed: ModelState,
    trial: Option<Trial>,
    pattern: SparseMatrix,
    reductions: [Option<Reduction>; 2],
    last_average_flux: f64,
}

impl FeModel {
    pub fn new(
        mesh: Mesh,
        materials: Vec<Material>,
        element_material: Vec<usize>,
        thickness: f64,
    ) -> Result<Self, FemError> {
        mesh.validate()?;
        if materials.is_empty() {
            return Err(FemError::InvalidInput("no material".into()));
        }
        for m in &materials {
            m.validate()?;
        }
        if element_material.len() != mesh.elements.len() {
            return Err(FemError::InvalidInput(
                "one material index per element is required".into(),
            ));
        }
        if element_material.iter().any(|&m| m >= materials.len()) {
            return Err(FemError::InvalidInput("material index out of range".into()));
        }
        if !(thickness > 0.0) {
            return Err(FemError::InvalidInput("thickness must be positive".into()));
        }
        let gauss = (0..mesh.elements.len())
            .map(|e| gauss_points(&mesh.element_coords(e), thickness))
            .collect();
        let ndof = mesh.num_dofs();
        let element_dofs: Vec<[usize; 8]> = mesh.elements.iter().map(element_dofs).collect();
        let pattern =
            SparseMatrix::from_element_dofs(ndof, element_dofs.iter().map(|d| d.as_slice()));
        let ngauss = mesh.elements.len() * GAUSS_POINTS;
        Ok(Self {
            mesh,
            materials,
            element_material,
            thickness,
            gauss_points: gauss,
            dirichlet: Vec::new(),
            external_loads: vec![0.0; ndof],
            constraints: Vec::new(),
            interface: InterfaceDofs::default(),
            controls: NewtonControls::default(),
            committed: ModelState {
                u: vec![0.0; ndof],
                gauss: vec![PlasticState::default(); ngauss],
                load_factor: 0.0,
            },
            trial: None,
            pattern,
            reductions: [None, None],
            last_average_flux: 0.0,
        })
    }

    /// Single-material convenience constructor.
    pub fn homogeneous(mesh: Mesh, material: Material, thickness: f64) -> Result<Self, FemError> {
        let n = mesh.elements.len();
        Self::new(mesh, vec![material], vec![0; n], thickness)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn element_material(&self) -> &[usize] {
        &self.element_material
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    pub fn controls(&self) -> NewtonControls {
        self.controls
    }

    pub fn set_controls(&mut self, controls: NewtonControls) {
        self.controls = controls;
    }

    pub fn dirichlet(&self) -> &[Prescribed] {
        &self.dirichlet
    }

    pub fn interface(&self) -> &InterfaceDofs {
        &self.interface
    }

    pub fn constraints(&self) -> &[Tie] {
        &self.constraints
    }

    pub fn external_loads(&self) -> &[f64] {
        &self.external_loads
    }

    /// Average flux of the last solve, used to translate absolute inner
    /// residual targets into ratios.
    pub fn last_average_flux(&self) -> f64 {
        self.last_average_flux
    }

    fn check_dof(&self, d: usize) -> Result<(), FemError> {
        if d >= self.num_dofs() {
            return Err(FemError::InvalidInput(format!("DOF {d} does not exist")));
        }
        Ok(())
    }

    pub fn add_dirichlet(&mut self, dof: usize, value: f64) -> Result<(), FemError> {
        self.check_dof(dof)?;
        if !value.is_finite() {
            return Err(FemError::InvalidInput("non-finite prescribed value".into()));
        }
        self.dirichlet.retain(|p| p.dof != dof);
        self.dirichlet.push(Prescribed { dof, value });
        self.reductions = [None, None];
        Ok(())
    }

    pub fn add_load(&mut self, dof: usize, value: f64) -> Result<(), FemError> {
        self.check_dof(dof)?;
        self.external_loads[dof] += value;
        Ok(())
    }

    pub fn add_constraint(&mut self, tie: Tie) -> Result<(), FemError> {
        self.check_dof(tie.dof)?;
        for &(m, _) in &tie.terms {
            self.check_dof(m)?;
            if m == tie.dof {
                return Err(FemError::InvalidInput("constraint refers to itself".into()));
            }
        }
        self.constraints.push(tie);
        self.reductions = [None, None];
        Ok(())
    }

    pub fn set_interface(&mut self, interface: InterfaceDofs) -> Result<(), FemError> {
        for &d in &interface.dofs {
            self.check_dof(d)?;
        }
        for t in &interface.ties {
            self.check_dof(t.dof)?;
            if t.terms.iter().any(|&(k, _)| k >= interface.dofs.len()) {
                return Err(FemError::InvalidInput("interface tie out of range".into()));
            }
        }
        self.interface = interface;
        self.reductions = [None, None];
        Ok(())
    }

    pub fn committed_displacements(&self) -> &[f64] {
        &self.committed.u
    }

    pub fn committed_load_factor(&self) -> f64 {
        self.committed.load_factor
    }

    pub fn committed_state(&self) -> &[PlasticState] {
        &self.committed.gauss
    }

    pub fn trial_displacements(&self) -> Option<&[f64]> {
        self.trial.as_ref().map(|t| t.state.u.as_slice())
    }

    pub fn trial_state(&self) -> Option<&[PlasticState]> {
        self.trial.as_ref().map(|t| t.state.gauss.as_slice())
    }

    pub fn trial_report(&self) -> Option<SolveReport> {
        self.trial.as_ref().map(|t| t.report)
    }

    /// Discards any uncommitted trial solution.
    pub fn discard_trial(&mut self) {
        self.trial = None;
    }

    /// Largest committed equivalent plastic strain over all Gauss points.
    pub fn max_committed_eqps(&self) -> f64 {
        self.committed.gauss.iter().fold(0.0, |m, s| m.max(s.eqps))
    }

    fn check_vector(&self, u: &[f64]) -> Result<(), FemError> {
        if u.len() != self.num_dofs() {
            return Err(FemError::InvalidInput(format!(
                "vector has {} entries, model has {} DOFs",
                u.len(),
                self.num_dofs()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FemError::InvalidInput("non-finite displacement".into()));
        }
        Ok(())
    }

    fn evaluate(
        &self,
        u: &[f64],
        with_tangent: bool,
        elements: Option<&[usize]>,
    ) -> Result<Evaluation, FemError> {
        let ndof = self.num_dofs();
        let mut f_int = vec![0.0; ndof];
        let mut tangent = with_tangent.then(|| {
            let mut k = self.pattern.clone();
            k.clear();
            k
        });
        let mut gauss = self.committed.gauss.clone();
        let mut extrapolated = false;
        let all: Vec<usize>;
        let list = match elements {
            Some(l) => l,
            None => {
                all = (0..self.mesh.elements.len()).collect();
                &all
            }
        };
        for &e in list {
            let dofs = element_dofs(&self.mesh.elements[e]);
            let ue = SVector::<f64, 8>::from_fn(|i, _| u[dofs[i]]);
            let material = &self.materials[self.element_material[e]];
            let mut fe = SVector::<f64, 8>::zeros();
            let mut ke = SMatrix::<f64, 8, 8>::zeros();
            for (q, gp) in self.gauss_points[e].iter().enumerate() {
                let strain = gp.b * ue;
                let idx = e * GAUSS_POINTS + q;
                let up = return_mapping(material, &strain, &self.committed.gauss[idx])?;
                fe -= gp.b.transpose() * up.stress * gp.weight;
                if with_tangent {
                    ke += gp.b.transpose() * up.tangent * gp.b * gp.weight;
                }
                gauss[idx] = up.state;
                extrapolated |= up.extrapolated;
            }
            for a in 0..8 {
                f_int[dofs[a]] += fe[a];
            }
            if let Some(k) = tangent.as_mut() {
                for a in 0..8 {
                    for b in 0..8 {
                        k.add(dofs[a], dofs[b], ke[(a, b)]);
                    }
                }
            }
        }
        Ok(Evaluation {
            f_int,
            tangent,
            gauss,
            extrapolated,
        })
    }

    /// Internal force vector `f_int(u)` from the committed history
    /// (`f_int = -K u` for elastic models).
    pub fn assemble_internal_forces(&self, u: &[f64]) -> Result<Vec<f64>, FemError> {
        self.check_vector(u)?;
        Ok(self.evaluate(u, false, None)?.f_int)
    }

    /// Consistent tangent `K = -d f_int / du` from the committed history.
    pub fn assemble_tangent(&self, u: &[f64]) -> Result<SparseMatrix, FemError> {
        self.check_vector(u)?;
        Ok(self
            .evaluate(u, true, None)?
            .tangent
            .expect("tangent requested"))
    }

    /// Internal forces of the trial solution restricted to a subset of
    /// elements.
    pub fn trial_internal_forces_over(&self, elements: &[usize]) -> Result<Vec<f64>, FemError> {
        let trial = self
            .trial
            .as_ref()
            .ok_or_else(|| FemError::State("no trial solution".into()))?;
        if elements.iter().any(|&e| e >= self.mesh.elements.len()) {
            return Err(FemError::InvalidInput("element out of range".into()));
        }
        Ok(self.evaluate(&trial.state.u, false, Some(elements))?.f_int)
    }

    fn prescribed_mask(&self, kind: DriveKind) -> Vec<bool> {
        let mut mask = vec![false; self.num_dofs()];
        for p in &self.dirichlet {
            mask[p.dof] = true;
        }
        if kind == DriveKind::Displacement {
            for &d in &self.interface.dofs {
                mask[d] = true;
            }
            for t in &self.interface.ties {
                mask[t.dof] = true;
            }
        }
        mask
    }

    fn reduction(&mut self, kind: DriveKind) -> Result<&Reduction, FemError> {
        let slot = kind as usize;
        if self.reductions[slot].is_none() {
            let r = self.build_reduction(kind)?;
            self.reductions[slot] = Some(r);
        }
        Ok(self.reductions[slot].as_ref().expect("built"))
    }

    fn build_reduction(&self, kind: DriveKind) -> Result<Reduction, FemError> {
        let ndof = self.num_dofs();
        let prescribed = self.prescribed_mask(kind);
        let mut slave = vec![false; ndof];
        for t in &self.constraints {
            if prescribed[t.dof] {
                return Err(FemError::InvalidInput(format!(
                    "constrained DOF {} is also prescribed",
                    t.dof
                )));
            }
            slave[t.dof] = true;
        }
        for t in &self.constraints {
            if t.terms.iter().any(|&(m, _)| slave[m] || prescribed[m]) {
                return Err(FemError::InvalidInput(
                    "constraint masters must be free DOFs".into(),
                ));
            }
        }
        // unpermuted reduced index of each free DOF
        let mut free_index = vec![usize::MAX; ndof];
        let mut nfree = 0;
        for d in 0..ndof {
            if !prescribed[d] && !slave[d] {
                free_index[d] = nfree;
                nfree += 1;
            }
        }
        let mut raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ndof];
        for d in 0..ndof {
            if free_index[d] != usize::MAX {
                raw[d].push((free_index[d], 1.0));
            }
        }
        for t in &self.constraints {
            raw[t.dof] = t.terms.iter().map(|&(m, w)| (free_index[m], w)).collect();
        }
        // reduced adjacency through the assembled pattern
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nfree];
        for i in 0..ndof {
            if raw[i].is_empty() {
                continue;
            }
            for (j, _) in self.pattern.row(i) {
                for &(a, _) in &raw[i] {
                    for &(b, _) in &raw[j] {
                        if a != b {
                            adj[a].push(b);
                        }
                    }
                }
            }
        }
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
        }
        let perm = if nfree > 0 {
            reverse_cuthill_mckee(&adj)
        } else {
            Vec::new()
        };
        let mut position = vec![0; nfree];
        for (new, &old) in perm.iter().enumerate() {
            position[old] = new;
        }
        let map: Vec<Vec<(usize, f64)>> = raw
            .into_iter()
            .map(|r| r.into_iter().map(|(a, w)| (position[a], w)).collect())
            .collect();
        let mut profile: Vec<usize> = (0..nfree).collect();
        for (old, row) in adj.iter().enumerate() {
            let a = position[old];
            for &b_old in row {
                let b = position[b_old];
                if b < a {
                    profile[a] = profile[a].min(b);
                }
            }
        }
        Ok(Reduction { map, profile })
    }

    /// Newton-Raphson over the load-factor range `(start, end)` from the
    /// committed state. The result is stored as a trial solution; the
    /// committed state is untouched until [`FeModel::commit_increment`].
    pub fn solve_increment(
        &mut self,
        drive: InterfaceDrive<'_>,
        range: (f64, f64),
    ) -> Result<SolveReport, FemError> {
        self.controls.validate()?;
        let (start, end) = range;
        if !start.is_finite() || !end.is_finite() {
            return Err(FemError::InvalidInput("non-finite load range".into()));
        }
        if (start - self.committed.load_factor).abs() > 1e-12 * start.abs().max(1.0) {
            return Err(FemError::State(format!(
                "model committed at {} but increment starts at {start}",
                self.committed.load_factor
            )));
        }
        let nif = self.interface.len();
        let kind = match drive {
            InterfaceDrive::Displacement(v) => {
                if v.len() != nif {
                    return Err(FemError::InvalidInput(format!(
                        "imposed displacement has {} entries, interface has {nif}",
                        v.len()
                    )));
                }
                DriveKind::Displacement
            }
            InterfaceDrive::Load(v) => {
                if v.len() != nif {
                    return Err(FemError::InvalidInput(format!(
                        "interface load has {} entries, interface has {nif}",
                        v.len()
                    )));
                }
                DriveKind::Free
            }
            InterfaceDrive::None => DriveKind::Free,
        };
        if let InterfaceDrive::Displacement(v) | InterfaceDrive::Load(v) = drive {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FemError::InvalidInput("non-finite interface data".into()));
            }
        }
        self.trial = None;
        let reduction = self.reduction(kind)?.clone();
        let controls = self.controls;
        let ndof = self.num_dofs();
        let nred = reduction.profile.len();

        let mut u = self.committed.u.clone();
        for p in &self.dirichlet {
            u[p.dof] = p.value * end;
        }
        let mut f_ext: Vec<f64> = self.external_loads.iter().map(|f| f * end).collect();
        match drive {
            InterfaceDrive::Displacement(v) => {
                for (k, &d) in self.interface.dofs.iter().enumerate() {
                    u[d] = v[k];
                }
                for t in &self.interface.ties {
                    u[t.dof] = t.terms.iter().map(|&(k, w)| w * v[k]).sum();
                }
            }
            InterfaceDrive::Load(v) => {
                for (k, &d) in self.interface.dofs.iter().enumerate() {
                    f_ext[d] += v[k];
                }
            }
            InterfaceDrive::None => {}
        }
        for t in &self.constraints {
            u[t.dof] = t.terms.iter().map(|&(m, w)| w * u[m]).sum();
        }

        let mut skyline = Skyline::with_profile(reduction.profile.clone());
        let mut applied = 0usize;
        // predictor: spread the prescribed jump through the committed tangent
        if nred > 0 {
            let eval = self.evaluate(&self.committed.u, true, None)?;
            let k = eval.tangent.as_ref().expect("tangent");
            let jump: Vec<f64> = u
                .iter()
                .zip(&self.committed.u)
                .map(|(a, b)| a - b)
                .collect();
            let kj = k.mul_vec(&jump);
            let r: Vec<f64> = (0..ndof)
                .map(|d| eval.f_int[d] + f_ext[d] - kj[d])
                .collect();
            let (du, _) = reduced_correction(k, &r, &reduction, &mut skyline)?;
            if du.iter().any(|v| v.abs() > 0.0) {
                for d in 0..ndof {
                    u[d] += du[d];
                }
                applied = 1;
            }
        }

        let mut flux_sum = 0.0;
        let mut flux_count = 0usize;
        let mut last = (f64::INFINITY, f64::INFINITY);
        for it in 0..=controls.max_iterations {
            let eval = self.evaluate(&u, true, None)?;
            let k = eval.tangent.as_ref().expect("tangent");
            let (nz_sum, nz_count) = eval
                .f_int
                .iter()
                .filter(|v| **v != 0.0)
                .fold((0.0, 0usize), |(s, c), v| (s + v.abs(), c + 1));
            if nz_count > 0 {
                flux_sum += nz_sum / nz_count as f64;
            }
            flux_count += 1;
            let average_flux = flux_sum / flux_count as f64;

            let r: Vec<f64> = (0..ndof).map(|d| eval.f_int[d] + f_ext[d]).collect();
            let (du, max_residual) = reduced_correction(k, &r, &reduction, &mut skyline)?;
            let max_corr = du.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let max_inc = u
                .iter()
                .zip(&self.committed.u)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

            let residual_ratio = ratio(max_residual, average_flux);
            let correction_ratio = ratio(max_corr, max_inc);
            last = (residual_ratio, correction_ratio);
            if residual_ratio <= controls.residual_ratio_tol
                && correction_ratio <= controls.correction_ratio_tol
            {
                let report = SolveReport {
                    iterations: it + applied,
                    final_residual_ratio: residual_ratio,
                    final_correction_ratio: correction_ratio,
                    converged: true,
                    average_flux,
                    hardening_extrapolated: eval.extrapolated,
                };
                self.last_average_flux = average_flux;
                self.trial = Some(Trial {
                    state: ModelState {
                        u,
                        gauss: eval.gauss,
                        load_factor: end,
                    },
                    f_int: eval.f_int,
                    f_ext,
                    report,
                });
                return Ok(report);
            }
            if !(max_corr.is_finite()) {
                break;
            }
            for d in 0..ndof {
                u[d] += du[d];
            }
        }
        Err(FemError::NotConverged {
            iterations: controls.max_iterations,
            residual_ratio: last.0,
            correction_ratio: last.1,
        })
    }

    /// Nodal reactions `-(f_int + f_ext)` of the trial solution on `dofs`.
    pub fn extract_reactions(&self, dofs: &[usize]) -> Result<Vec<f64>, FemError> {
        let trial = self
            .trial
            .as_ref()
            .ok_or_else(|| FemError::State("no trial solution".into()))?;
        dofs.iter()
            .map(|&d| {
                self.check_dof(d)?;
                Ok(-(trial.f_int[d] + trial.f_ext[d]))
            })
            .collect()
    }

    /// Reactions gathered on the interface entries, tied DOFs included
    /// through the transpose of their interpolation.
    pub fn interface_reactions(&self) -> Result<Vec<f64>, FemError> {
        let mut lambda = self.extract_reactions(&self.interface.dofs)?;
        let tie_dofs: Vec<usize> = self.interface.ties.iter().map(|t| t.dof).collect();
        let tied = self.extract_reactions(&tie_dofs)?;
        for (t, r) in self.interface.ties.iter().zip(tied) {
            for &(k, w) in &t.terms {
                lambda[k] += w * r;
            }
        }
        Ok(lambda)
    }

    /// Trial displacements on the interface entries.
    pub fn interface_displacements(&self) -> Result<Vec<f64>, FemError> {
        let u = self
            .trial_displacements()
            .ok_or_else(|| FemError::State("no trial solution".into()))?;
        Ok(self.interface.dofs.iter().map(|&d| u[d]).collect())
    }

    pub fn commit_increment(&mut self) -> Result<(), FemError> {
        let trial = self
            .trial
            .take()
            .ok_or_else(|| FemError::State("no trial solution to commit".into()))?;
        self.committed = trial.state;
        Ok(())
    }

    /// Equivalent plastic strain per node, taken as the maximum over the
    /// Gauss points of the adjacent elements.
    pub fn nodal_eqps(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.mesh.num_nodes()];
        for (e, conn) in self.mesh.elements.iter().enumerate() {
            let emax = (0..GAUSS_POINTS)
                .map(|q| self.committed.gauss[e * GAUSS_POINTS + q].eqps)
                .fold(0.0, f64::max);
            for &n in conn {
                out[n] = out[n].max(emax);
            }
        }
        out
    }
}

/// Solves `T^T K T x = T^T r` and returns `T x` with `max |T^T r|`.
fn reduced_correction(
    k: &SparseMatrix,
    r: &[f64],
    reduction: &Reduction,
    skyline: &mut Skyline,
) -> Result<(Vec<f64>, f64), FemError> {
    let ndof = r.len();
    let nred = reduction.profile.len();
    let mut rhs = vec![0.0; nred];
    for d in 0..ndof {
        for &(a, w) in &reduction.map[d] {
            rhs[a] += w * r[d];
        }
    }
    let max_residual = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if nred == 0 {
        return Ok((vec![0.0; ndof], max_residual));
    }
    skyline.clear();
    for i in 0..ndof {
        let mi = &reduction.map[i];
        if mi.is_empty() {
            continue;
        }
        for (j, kij) in k.row(i) {
            for &(a, wa) in mi {
                for &(b, wb) in &reduction.map[j] {
                    if a >= b {
                        skyline.add_lower(a, b, wa * wb * kij);
                    }
                }
            }
        }
    }
    skyline.factor()?;
    skyline.solve(&mut rhs);
    let du = (0..ndof)
        .map(|d| reduction.map[d].iter().map(|&(a, w)| w * rhs[a]).sum())
        .collect();
    Ok((du, max_residual))
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

pub(crate) fn element_dofs(conn: &[usize; 4]) -> [usize; 8] {
    let mut d = [0; 8];
    for a in 0..4 {
        d[2 * a] = 2 * conn[a];
        d[2 * a + 1] = 2 * conn[a] + 1;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{dof, material::reference_hardening};

    fn unit_square(material: Material) -> FeModel {
        let mesh = Mesh::rectangle(0.0, 0.0, 1.0, 1.0, 1, 1);
        FeModel::homogeneous(mesh, material, 1.0).unwrap()
    }

    #[test]
    fn zero_displacement_zero_force() {
        let m = unit_square(Material::elastic(1.0, 0.0));
        let f = m.assemble_internal_forces(&[0.0; 8]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_strain_element_forces() {
        // u_x = 0.01 x: sigma_xx = E * 0.01 = 0.01; each edge node carries half
        // the face resultant, internal forces oppose the stretch
        let m = unit_square(Material::elastic(1.0, 0.0));
        let nodes = &m.mesh().nodes;
        let u: Vec<f64> = (0..8)
            .map(|d| {
                if d % 2 == 0 {
                    0.01 * nodes[d / 2][0]
                } else {
                    0.0
                }
            })
            .collect();
        let f = m.assemble_internal_forces(&u).unwrap();
        let expected = [0.005, 0.0, -0.005, 0.0, 0.005, 0.0, -0.005, 0.0];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{f:?}");
        }
    }

    #[test]
    fn rejects_nonfinite_input() {
        let m = unit_square(Material::elastic(1.0, 0.0));
        let mut u = vec![0.0; 8];
        u[3] = f64::NAN;
        assert!(matches!(
            m.assemble_internal_forces(&u),
            Err(FemError::InvalidInput(_))
        ));
        assert!(m.assemble_internal_forces(&[0.0; 6]).is_err());
    }

    fn clamped_bar(material: Material, nx: usize) -> FeModel {
        let mesh = Mesh::rectangle(0.0, 0.0, nx as f64, 1.0, nx, 1);
        let left = mesh.node_sets["left"].clone();
        let right = mesh.node_sets["right"].clone();
        let mut m = FeModel::homogeneous(mesh, material, 1.0).unwrap();
        for &n in &left {
            m.add_dirichlet(dof(n, 0), 0.0).unwrap();
        }
        m.add_dirichlet(dof(left[0], 1), 0.0).unwrap();
        for &n in &right {
            m.add_dirichlet(dof(n, 0), 0.01 * nx as f64).unwrap();
        }
        m
    }

    #[test]
    fn elastic_increment_converges_in_one_iteration() {
        let mut m = clamped_bar(Material::elastic(210_000.0, 0.3), 4);
        let rep = m.solve_increment(InterfaceDrive::None, (0.0, 1.0)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!(rep.final_residual_ratio <= 0.005 && rep.final_correction_ratio <= 0.01);
    }

    #[test]
    fn reactions_balance_external_loads() {
        let mut m = clamped_bar(Material::elastic(1000.0, 0.25), 3);
        m.add_load(dof(5, 1), 2.0).unwrap();
        m.solve_increment(InterfaceDrive::None, (0.0, 1.0)).unwrap();
        let dofs: Vec<usize> = m.dirichlet().iter().map(|p| p.dof).collect();
        let reactions = m.extract_reactions(&dofs).unwrap();
        let mut total = [0.0; 2];
        for (d, r) in dofs.iter().zip(&reactions) {
            total[d % 2] += r;
        }
        total[1] += 2.0;
        assert!(total[0].abs() < 1e-9 && total[1].abs() < 1e-9, "{total:?}");
        assert!(m.extract_reactions(&[1000]).is_err());
    }

    #[test]
    fn unloaded_model_has_zero_reactions() {
        let mut m = clamped_bar(Material::elastic(1000.0, 0.25), 2);
        m.solve_increment(InterfaceDrive::None, (0.0, 0.0)).unwrap();
        let dofs: Vec<usize> = m.dirichlet().iter().map(|p| p.dof).collect();
        assert!(m
            .extract_reactions(&dofs)
            .unwrap()
            .iter()
            .all(|&r| r == 0.0));
    }

    #[test]
    fn commit_requires_trial() {
        let mut m = clamped_bar(Material::elastic(1000.0, 0.25), 2);
        assert!(matches!(m.commit_increment(), Err(FemError::State(_))));
        m.solve_increment(InterfaceDrive::None, (0.0, 0.5)).unwrap();
        let trial = m.trial_displacements().unwrap().to_vec();
        m.commit_increment().unwrap();
        assert_eq!(m.committed_displacements(), trial.as_slice());
        assert_eq!(m.committed_load_factor(), 0.5);
        // next increment must start where the last one ended
        assert!(m.solve_increment(InterfaceDrive::None, (0.0, 1.0)).is_err());
    }

    #[test]
    fn resolving_without_commit_is_deterministic() {
        let mat = Material::plastic(210_000.0, 0.3, reference_hardening());
        let mut m = clamped_bar(mat, 3);
        let a = m.solve_increment(InterfaceDrive::None, (0.0, 0.3)).unwrap();
        let ua = m.trial_displacements().unwrap().to_vec();
        let b = m.solve_increment(InterfaceDrive::None, (0.0, 0.3)).unwrap();
        let ub = m.trial_displacements().unwrap().to_vec();
        assert_eq!(a, b);
        assert_eq!(ua, ub);
    }

    #[test]
    fn plastic_strain_is_monotone_across_commits() {
        let mat = Material::plastic(210_000.0, 0.3, reference_hardening());
        let mut m = clamped_bar(mat, 3);
        let mut prev = vec![0.0; m.committed_state().len()];
        for k in 0..6 {
            let range = (k as f64 * 0.2, (k + 1) as f64 * 0.2);
            m.solve_increment(InterfaceDrive::None, range).unwrap();
            m.commit_increment().unwrap();
            let now: Vec<f64> = m.committed_state().iter().map(|s| s.eqps).collect();
            assert!(now.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = now;
        }
        assert!(m.max_committed_eqps() > 0.0);
    }

    #[test]
    fn relaxed_controls_never_need_more_iterations() {
        let mat = Material::plastic(210_000.0, 0.3, reference_hardening());
        let mut tight = clamped_bar(mat.clone(), 3);
        let mut loose = clamped_bar(mat, 3);
        loose.set_controls(NewtonControls::relaxed());
        let a = tight
            .solve_increment(InterfaceDrive::None, (0.0, 0.5))
            .unwrap();
        let b = loose
            .solve_increment(InterfaceDrive::None, (0.0, 0.5))
            .unwrap();
        assert!(
            b.iterations <= a.iterations,
            "{} vs {}",
            b.iterations,
            a.iterations
        );
    }

    #[test]
    fn singular_system_is_reported() {
        // no supports at all
        let mesh = Mesh::rectangle(0.0, 0.0, 1.0, 1.0, 1, 1);
        let mut m = FeModel::homogeneous(mesh, Material::elastic(1.0, 0.2), 1.0).unwrap();
        m.add_load(0, 1.0).unwrap();
        assert!(matches!(
            m.solve_increment(InterfaceDrive::None, (0.0, 1.0)),
            Err(FemError::Singular { .. })
        ));
    }

    #[test]
    fn global_tangent_matches_finite_differences() {
        let mat = Material::plastic(210_000.0, 0.3, reference_hardening());
        let m = clamped_bar(mat, 3);
        let mut u = vec![0.0; m.num_dofs()];
        for (i, p) in m.mesh().nodes.iter().enumerate() {
            u[2 * i] = 0.004 * p[0] + 0.0001 * p[1];
            u[2 * i + 1] = -0.001 * p[1] + 0.0002 * p[0] * p[1];
        }
        let k = m.assemble_tangent(&u).unwrap().to_dense();
        let h = 1e-7;
        let mut worst: f64 = 0.0;
        for j in 0..m.num_dofs() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let fp = m.assemble_internal_forces(&up).unwrap();
            let fm = m.assemble_internal_forces(&um).unwrap();
            for i in 0..m.num_dofs() {
                let fd = -(fp[i] - fm[i]) / (2.0 * h);
                worst = worst.max((fd - k[(i, j)]).abs() / k.amax());
            }
        }
        assert!(worst < 1e-5, "worst {worst}");
    }

    #[test]
    fn tangent_is_symmetric() {
        let mat = Material::plastic(210_000.0, 0.3, reference_hardening());
        let mut m = clamped_bar(mat, 3);
        m.solve_increment(InterfaceDrive::None, (0.0, 0.4)).unwrap();
        m.commit_increment().unwrap();
        let mut u = m.committed_displacements().to_vec();
        for (i, v) in u.iter_mut().enumerate() {
            *v *= 1.2 + 0.01 * (i % 3) as f64;
        }
        let k = m.assemble_tangent(&u).unwrap();
        assert!(k.asymmetry() <= 1e-12 * k.max_abs());
    }
}
