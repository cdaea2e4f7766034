//! Global-local iterative coupling.
//!
//! The unknown is the corrective load `p` on the global interface. One
//! Picard evaluation solves the global model under `p`, imposes its trace on
//! every patch, gathers the patch reactions and returns the interface
//! residual `r`. The accelerator maps `(p, p + r)` to the next `p`.

pub mod controls;
pub mod oracle;
pub mod record;

use std::sync::Arc;

use rayon::prelude::*;

pub use controls::{
    ComplementStrategy, CouplingControls, IncrementationPolicy, Incrementer, InexactControl,
    InexactMode,
};
pub use record::{ConvergenceRecord, GlIteration, IncrementRecord, Totals};

use crate::accel::{
    AccelError, AcceleratorConfig, AcceleratorState, InterfaceLayout, InterfaceVector,
};
use crate::fem::{FeModel, FemError, InterfaceDofs, InterfaceDrive, NewtonControls, SolveReport};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("invalid coupling input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error("i/o error: {0}")]
    Io(String),
}

/// A refined patch and the position of its interface entries in the
/// global interface layout (`injection[k]` is the global index of local
/// entry `k`).
#[derive(Debug, Clone)]
pub struct PatchModel {
    pub name: String,
    pub model: FeModel,
    pub injection: Vec<usize>,
    /// Global-resolution copy of the overlapped region, required by the
    /// workaround strategy. Its interface entries follow `injection`.
    pub global_version: Option<FeModel>,
}

/// Trace and injection operators.
#[derive(Debug, Clone)]
pub struct InterfaceMap {
    layout: Arc<InterfaceLayout>,
    injections: Vec<Vec<usize>>,
}

impl InterfaceMap {
    /// Injections must be injective, pairwise disjoint and cover the layout.
    pub fn new(
        layout: Arc<InterfaceLayout>,
        injections: Vec<Vec<usize>>,
    ) -> Result<Self, CouplingError> {
        let mut owner = vec![usize::MAX; layout.len()];
        for (s, inj) in injections.iter().enumerate() {
            for &g in inj {
                if g >= layout.len() {
                    return Err(CouplingError::InvalidInput(format!(
                        "patch {s} maps to interface entry {g} outside the layout"
                    )));
                }
                if owner[g] != usize::MAX {
                    return Err(CouplingError::InvalidInput(format!(
                        "interface entry {g} claimed by patches {} and {s}",
                        owner[g]
                    )));
                }
                owner[g] = s;
            }
        }
        if let Some(g) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(CouplingError::InvalidInput(format!(
                "interface entry {g} belongs to no patch"
            )));
        }
        Ok(Self { layout, injections })
    }

    pub fn layout(&self) -> &Arc<InterfaceLayout> {
        &self.layout
    }

    pub fn num_patches(&self) -> usize {
        self.injections.len()
    }

    pub fn injection(&self, s: usize) -> &[usize] {
        &self.injections[s]
    }

    /// `A^{sT} x`.
    pub fn gather(&self, s: usize, x: &[f64]) -> Vec<f64> {
        self.injections[s].iter().map(|&g| x[g]).collect()
    }

    /// `out += A^s y`.
    pub fn scatter_add(&self, s: usize, y: &[f64], out: &mut [f64]) {
        for (&g, v) in self.injections[s].iter().zip(y) {
            out[g] += v;
        }
    }
}

/// Everything produced by one Picard evaluation `p -> r(p)`.
#[derive(Debug, Clone)]
pub struct PicardEvaluation {
    pub u_gamma: Vec<f64>,
    pub residual: InterfaceVector,
    /// `Σ A^s λ^{s,L}`.
    pub lambda_local: Vec<f64>,
    /// `A⁰ λ⁰` from the complement elements of the global solution.
    pub lambda_complement: Vec<f64>,
    pub global_report: SolveReport,
    pub patch_reports: Vec<SolveReport>,
    pub displacement_gap: f64,
}

impl PicardEvaluation {
    /// `|A⁰λ⁰ + Σ A^s λ^{s,L}|_inf`.
    pub fn imbalance(&self) -> f64 {
        self.lambda_complement
            .iter()
            .zip(&self.lambda_local)
            .fold(0.0f64, |m, (a, b)| m.max((a + b).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BalanceReport {
    pub imbalance: f64,
    pub displacement_gap: f64,
    pub abs_tol: f64,
}

impl BalanceReport {
    pub fn balanced(&self) -> bool {
        self.imbalance <= self.abs_tol && self.displacement_gap <= 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Converged,
    Failed,
}

#[derive(Debug, Clone)]
pub struct CouplingProblem {
    global: FeModel,
    patches: Vec<PatchModel>,
    map: InterfaceMap,
    complement: Vec<usize>,
    controls: CouplingControls,
    policy: IncrementationPolicy,
    accelerator: AcceleratorState,
    steps: Vec<f64>,
    base_global: NewtonControls,
    base_patches: Vec<NewtonControls>,
    p: InterfaceVector,
    /// Last two committed `(p, load factor)` pairs of the current step.
    p_history: Vec<(InterfaceVector, f64)>,
    last_residual_inf: Option<f64>,
    last_delta_lambda: Option<f64>,
    prev_lambda: Option<Vec<f64>>,
    last_balance: Option<BalanceReport>,
    trace_p: Option<Vec<Vec<f64>>>,
}

impl CouplingProblem {
    /// `complement` lists the global elements outside every patch region.
    /// `steps` are the load-factor targets of consecutive steps.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mut global: FeModel,
        patches: Vec<PatchModel>,
        layout: Arc<InterfaceLayout>,
        complement: Vec<usize>,
        controls: CouplingControls,
        policy: IncrementationPolicy,
        accelerator: AcceleratorConfig,
        steps: Vec<f64>,
    ) -> Result<Self, CouplingError> {
        controls.validate()?;
        policy.validate()?;
        if steps.is_empty() || steps.iter().any(|s| !s.is_finite()) {
            return Err(CouplingError::InvalidInput(
                "at least one finite step target is required".into(),
            ));
        }
        if patches.is_empty() {
            return Err(CouplingError::InvalidInput("no patch to couple".into()));
        }
        if complement
            .iter()
            .any(|&e| e >= global.mesh().elements.len())
        {
            return Err(CouplingError::InvalidInput(
                "complement element out of range".into(),
            ));
        }
        let map = InterfaceMap::new(
            layout.clone(),
            patches.iter().map(|p| p.injection.clone()).collect(),
        )?;
        let tol = 1e-9;
        for (k, &d) in layout.dofs().iter().enumerate() {
            let node = d / 2;
            if node >= global.mesh().num_nodes() {
                return Err(CouplingError::InvalidInput(format!(
                    "interface DOF {d} outside the global model"
                )));
            }
            let x = global.mesh().nodes[node];
            let c = layout.coords()[k];
            if (x[0] - c[0]).abs() > tol || (x[1] - c[1]).abs() > tol {
                return Err(CouplingError::InvalidInput(format!(
                    "interface entry {k} does not sit on global node {node}"
                )));
            }
        }
        for patch in &patches {
            check_patch_interface(&patch.name, &patch.model, &patch.injection, &layout, tol)?;
            if let Some(gv) = &patch.global_version {
                check_patch_interface(&patch.name, gv, &patch.injection, &layout, tol)?;
            } else if controls.strategy == ComplementStrategy::WorkaroundGlobalPatches {
                return Err(CouplingError::InvalidInput(format!(
                    "patch {} has no global version for the workaround strategy",
                    patch.name
                )));
            }
        }
        let start = global.committed_load_factor();
        for patch in &patches {
            if patch.model.committed_load_factor() != start {
                return Err(CouplingError::InvalidInput(
                    "models committed at different load factors".into(),
                ));
            }
        }
        global.set_interface(InterfaceDofs {
            dofs: layout.dofs().to_vec(),
            ties: Vec::new(),
        })?;
        let base_global = global.controls();
        let base_patches = patches.iter().map(|p| p.model.controls()).collect();
        let p = InterfaceVector::zeros(layout);
        Ok(Self {
            global,
            patches,
            map,
            complement,
            controls,
            policy,
            accelerator: AcceleratorState::new(accelerator)?,
            steps,
            base_global,
            base_patches,
            p,
            p_history: Vec::new(),
            last_residual_inf: None,
            last_delta_lambda: None,
            prev_lambda: None,
            last_balance: None,
            trace_p: None,
        })
    }

    pub fn global(&self) -> &FeModel {
        &self.global
    }

    pub fn patches(&self) -> &[PatchModel] {
        &self.patches
    }

    pub fn map(&self) -> &InterfaceMap {
        &self.map
    }

    pub fn layout(&self) -> &Arc<InterfaceLayout> {
        self.map.layout()
    }

    pub fn controls(&self) -> &CouplingControls {
        &self.controls
    }

    pub fn policy(&self) -> &IncrementationPolicy {
        &self.policy
    }

    pub fn accelerator(&self) -> &AcceleratorState {
        &self.accelerator
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Committed corrective load.
    pub fn corrective_load(&self) -> &InterfaceVector {
        &self.p
    }

    /// Keeps every `p` fed to a Picard evaluation from now on.
    pub fn enable_trace(&mut self) {
        self.trace_p = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[Vec<f64>]> {
        self.trace_p.as_deref()
    }

    /// Largest committed equivalent plastic strain over the patches.
    pub fn max_patch_eqps(&self) -> f64 {
        self.patches
            .iter()
            .map(|p| p.model.max_committed_eqps())
            .fold(0.0, f64::max)
    }

    /// Committed global interface displacements.
    pub fn interface_displacements(&self) -> Vec<f64> {
        let u = self.global.committed_displacements();
        self.layout().dofs().iter().map(|&d| u[d]).collect()
    }

    fn discard_all(&mut self) {
        self.global.discard_trial();
        for p in &mut self.patches {
            p.model.discard_trial();
            if let Some(gv) = p.global_version.as_mut() {
                gv.discard_trial();
            }
        }
    }

    fn commit_all(&mut self) -> Result<(), CouplingError> {
        self.global.commit_increment()?;
        let workaround = self.controls.strategy == ComplementStrategy::WorkaroundGlobalPatches;
        for p in &mut self.patches {
            p.model.commit_increment()?;
            if workaround {
                if let Some(gv) = p.global_version.as_mut() {
                    gv.commit_increment()?;
                }
            }
        }
        Ok(())
    }

    fn apply_inner_controls(&mut self, driver: Option<f64>) {
        let ix = self.controls.inexact;
        let pick = |base: NewtonControls, flux: f64| match (ix, driver) {
            (Some(ix), Some(d)) => ix.controls_for(d, flux, base),
            _ => base,
        };
        let c = pick(self.base_global, self.global.last_average_flux());
        self.global.set_controls(c);
        for (p, &base) in self.patches.iter_mut().zip(&self.base_patches) {
            let c = pick(base, p.model.last_average_flux());
            p.model.set_controls(c);
        }
    }

    /// Picard evaluation at corrective load `p` over the load-factor
    /// `range`, leaving trial solutions in every model.
    pub fn evaluate(
        &mut self,
        p: &InterfaceVector,
        range: (f64, f64),
    ) -> Result<PicardEvaluation, CouplingError> {
        if !Arc::ptr_eq(p.layout(), self.map.layout()) && p.layout() != self.map.layout() {
            return Err(AccelError::LayoutMismatch.into());
        }
        let global_report = self
            .global
            .solve_increment(InterfaceDrive::Load(p.values()), range)?;
        let u_gamma = self.global.interface_displacements()?;
        let workaround = self.controls.strategy == ComplementStrategy::WorkaroundGlobalPatches;
        let results: Vec<Result<PatchResult, FemError>> = self
            .patches
            .par_iter_mut()
            .map(|patch| solve_patch(patch, &u_gamma, range, workaround))
            .collect();
        let n = self.map.layout().len();
        let mut lambda_local = vec![0.0; n];
        let mut lambda_global = vec![0.0; n];
        let mut patch_reports = Vec::with_capacity(self.patches.len());
        let mut gap = 0.0f64;
        for (s, res) in results.into_iter().enumerate() {
            let res = res?;
            self.map
                .scatter_add(s, &res.lambda_local, &mut lambda_local);
            if let Some(lg) = &res.lambda_global {
                self.map.scatter_add(s, lg, &mut lambda_global);
            }
            patch_reports.push(res.report);
            gap = gap.max(res.gap);
        }
        let f0 = self.global.trial_internal_forces_over(&self.complement)?;
        let ext = self.global.external_loads();
        let dofs = self.map.layout().dofs();
        let lambda_complement: Vec<f64> =
            dofs.iter().map(|&d| -(f0[d] + ext[d] * range.1)).collect();
        let r: Vec<f64> = if workaround {
            (0..n)
                .map(|k| lambda_global[k] - lambda_local[k] - p.values()[k])
                .collect()
        } else {
            (0..n)
                .map(|k| -(lambda_complement[k] + lambda_local[k]))
                .collect()
        };
        let residual = InterfaceVector::new(self.map.layout().clone(), r)?;
        Ok(PicardEvaluation {
            u_gamma,
            residual,
            lambda_local,
            lambda_complement,
            global_report,
            patch_reports,
            displacement_gap: gap,
        })
    }

    /// `r(p)` over `range` without committing anything.
    pub fn picard_residual(
        &mut self,
        p: &InterfaceVector,
        range: (f64, f64),
    ) -> Result<InterfaceVector, CouplingError> {
        let out = self.evaluate(p, range);
        self.discard_all();
        Ok(out?.residual)
    }

    /// One global-to-local pass at the committed corrective load, without
    /// update or commit (plain submodeling).
    pub fn submodel_pass(
        &mut self,
        range: (f64, f64),
    ) -> Result<(BalanceReport, InterfaceVector), CouplingError> {
        let p = self.p.clone();
        let out = self.evaluate(&p, range);
        self.discard_all();
        let ev = out?;
        Ok((
            BalanceReport {
                imbalance: ev.imbalance(),
                displacement_gap: ev.displacement_gap,
                abs_tol: self.controls.abs_tol,
            },
            ev.residual,
        ))
    }

    /// Balance of the last converged increment.
    pub fn verify_balance(&self) -> Option<BalanceReport> {
        self.last_balance
    }

    fn predictor(&self, load_end: f64) -> InterfaceVector {
        match self.p_history.as_slice() {
            [(p0, l0), (p1, l1)] if (l1 - l0).abs() > 0.0 => {
                let s = (load_end - l1) / (l1 - l0);
                p1.axpy(s, &p1.sub(p0).expect("same layout"))
                    .expect("same layout")
            }
            _ => self.p.clone(),
        }
    }

    /// Runs every step; an aborted run is reported in the record, errors
    /// are reserved for invalid input.
    pub fn run(&mut self) -> Result<ConvergenceRecord, CouplingError> {
        let mut record = ConvergenceRecord::new(self.patches.len());
        let mut load = self.global.committed_load_factor();
        let steps = self.steps.clone();
        for (s, &target) in steps.iter().enumerate() {
            self.run_step(s, load, target, &mut record)?;
            if record.aborted.is_some() {
                break;
            }
            load = target;
        }
        Ok(record)
    }

    /// Advances one step from load factor `from` to `to`.
    pub fn run_step(
        &mut self,
        step: usize,
        from: f64,
        to: f64,
        record: &mut ConvergenceRecord,
    ) -> Result<(), CouplingError> {
        let mut inc = self.policy.start();
        let span = to - from;
        let mut step_max = 0.0f64;
        self.last_residual_inf = None;
        self.last_delta_lambda = None;
        self.p_history = vec![(self.p.clone(), from)];
        let mut committed = 0usize;
        let mut attempt = 0usize;
        while !inc.done() {
            let (fa, fb) = inc.next_range();
            let la = from + fa * span;
            let lb = if fb >= 1.0 { to } else { from + fb * span };
            let p0 = self.predictor(lb);
            let mut rec = IncrementRecord {
                step,
                increment: committed,
                attempt,
                fraction_start: fa,
                fraction_end: fb,
                load_start: la,
                load_end: lb,
                converged: false,
                iterations: Vec::new(),
            };
            let (outcome, reason) = self.run_increment((la, lb), p0, &mut step_max, &mut rec)?;
            let gl = rec.gl_iterations();
            record.increments.push(rec);
            match outcome {
                Outcome::Converged => {
                    inc.accept(fb, gl);
                    committed += 1;
                    attempt = 0;
                }
                Outcome::Failed => {
                    self.discard_all();
                    self.accelerator.discard_increment();
                    attempt += 1;
                    log::info!("increment ({la}, {lb}) failed: {reason}; cutting back");
                    if !inc.cut_back() {
                        record.aborted = Some(format!(
                            "step {step}: increment at fraction {fa} failed after {} cutbacks: {reason}",
                            attempt - 1
                        ));
                        return Ok(());
                    }
                }
            }
        }
        Ok(())
    }

    fn run_increment(
        &mut self,
        range: (f64, f64),
        p0: InterfaceVector,
        step_max: &mut f64,
        rec: &mut IncrementRecord,
    ) -> Result<(Outcome, String), CouplingError> {
        let saved_driver = (self.last_residual_inf, self.last_delta_lambda);
        self.prev_lambda = None;
        let mut p = p0;
        let mut inc_max = 0.0f64;
        let fail = |this: &mut Self, reason: String| {
            (this.last_residual_inf, this.last_delta_lambda) = saved_driver;
            Ok((Outcome::Failed, reason))
        };
        for j in 0..self.controls.max_gl_iterations {
            let driver = self.controls.inexact.and_then(|ix| match ix.mode {
                InexactMode::PreviousResidual => self.last_residual_inf,
                InexactMode::DeltaLambda => self.last_delta_lambda,
            });
            self.apply_inner_controls(driver);
            if let Some(t) = self.trace_p.as_mut() {
                t.push(p.values().to_vec());
            }
            let ev = match self.evaluate(&p, range) {
                Ok(ev) => ev,
                Err(CouplingError::Fem(
                    e @ (FemError::NotConverged { .. }
                    | FemError::Singular { .. }
                    | FemError::ReturnMapping(_)),
                )) => {
                    return fail(self, format!("inner solve failed: {e}"));
                }
                Err(e) => return Err(e),
            };
            let rn = ev.residual.norm2();
            let ri = ev.residual.norm_inf();
            rec.iterations.push(GlIteration {
                gl_iter: j,
                residual_norm: rn,
                residual_inf: ri,
                global_newton_iters: ev.global_report.iterations,
                patch_newton_iters: ev.patch_reports.iter().map(|r| r.iterations).collect(),
            });
            if !rn.is_finite() {
                return fail(self, "non-finite interface residual".into());
            }
            inc_max = inc_max.max(rn);
            let smax = step_max.max(inc_max);
            if let Some(prev) = &self.prev_lambda {
                let d = prev
                    .iter()
                    .zip(&ev.lambda_local)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                self.last_delta_lambda = Some(d);
            }
            self.prev_lambda = Some(ev.lambda_local.clone());
            self.last_residual_inf = Some(ri);
            if self.controls.converged(ri, rn, inc_max, smax) {
                self.commit_all()?;
                *step_max = smax;
                self.p = p.clone();
                self.p_history.push((p, range.1));
                if self.p_history.len() > 2 {
                    self.p_history.remove(0);
                }
                self.accelerator.complete_increment();
                self.last_balance = Some(BalanceReport {
                    imbalance: ev.imbalance(),
                    displacement_gap: ev.displacement_gap,
                    abs_tol: self.controls.abs_tol,
                });
                rec.converged = true;
                return Ok((Outcome::Converged, String::new()));
            }
            let pt = p.add(&ev.residual)?;
            p = match self.accelerator.accelerate(&p, &pt) {
                Ok(next) => next,
                Err(AccelError::NonFinite) => {
                    return fail(self, "non-finite accelerated load".into())
                }
                Err(e) => return Err(e.into()),
            };
        }
        fail(
            self,
            format!(
                "no GL convergence in {} iterations",
                self.controls.max_gl_iterations
            ),
        )
    }
}

struct PatchResult {
    report: SolveReport,
    lambda_local: Vec<f64>,
    lambda_global: Option<Vec<f64>>,
    gap: f64,
}

fn solve_patch(
    patch: &mut PatchModel,
    u_gamma: &[f64],
    range: (f64, f64),
    workaround: bool,
) -> Result<PatchResult, FemError> {
    let u_s: Vec<f64> = patch.injection.iter().map(|&g| u_gamma[g]).collect();
    let report = patch
        .model
        .solve_increment(InterfaceDrive::Displacement(&u_s), range)?;
    let lambda_local = patch.model.interface_reactions()?;
    let gap = patch
        .model
        .interface_displacements()?
        .iter()
        .zip(&u_s)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let lambda_global = if workaround {
        let gv = patch
            .global_version
            .as_mut()
            .ok_or_else(|| FemError::State("missing global version of a patch".into()))?;
        gv.solve_increment(InterfaceDrive::Displacement(&u_s), range)?;
        Some(gv.interface_reactions()?)
    } else {
        None
    };
    Ok(PatchResult {
        report,
        lambda_local,
        lambda_global,
        gap,
    })
}

fn check_patch_interface(
    name: &str,
    model: &FeModel,
    injection: &[usize],
    layout: &InterfaceLayout,
    tol: f64,
) -> Result<(), CouplingError> {
    let dofs = &model.interface().dofs;
    if dofs.len() != injection.len() {
        return Err(CouplingError::InvalidInput(format!(
            "patch {name}: {} interface DOFs but {} injection entries",
            dofs.len(),
            injection.len()
        )));
    }
    for (&d, &g) in dofs.iter().zip(injection) {
        let x = model.mesh().nodes[d / 2];
        let c = layout.coords()[g];
        if d % 2 != layout.dofs()[g] % 2 {
            return Err(CouplingError::InvalidInput(format!(
                "patch {name}: DOF {d} and interface entry {g} have different components"
            )));
        }
        if (x[0] - c[0]).abs() > tol || (x[1] - c[1]).abs() > tol {
            return Err(CouplingError::InvalidInput(format!(
                "patch {name}: node at ({}, {}) does not match interface entry {g} at ({}, {})",
                x[0], x[1], c[0], c[1]
            )));
        }
    }
    Ok(())
}
