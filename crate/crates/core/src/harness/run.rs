use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::build::build_case;
use super::case::CaseFile;
use super::reference::{solve_reference, ReferenceSolution};
use super::HarnessError;
use crate::accel::AcceleratorKind;
use crate::coupling::{BalanceReport, ConvergenceRecord, CouplingProblem, InexactControl, Totals};
use crate::fem::FeModel;

/// Command-line style overrides applied on top of a case file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub accelerator: Option<AcceleratorKind>,
    /// Constant relaxation factor (also the first Aitken factor).
    pub omega: Option<f64>,
    pub inexact: Option<f64>,
    pub reference: bool,
    pub out: Option<PathBuf>,
}

impl RunOptions {
    pub fn apply(&self, case: &CaseFile) -> CaseFile {
        let mut case = case.clone();
        if let Some(kind) = self.accelerator {
            case.accelerator.kind = kind;
        }
        if let Some(w) = self.omega {
            case.accelerator.omega = w;
        }
        if let Some(alpha) = self.inexact {
            case.coupling.inexact = Some(InexactControl::previous_residual(alpha));
        }
        if let Some(out) = &self.out {
            case.output.dir = Some(out.display().to_string());
        }
        case
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// `|eqps - eqps_ref| / eqps_ref`, or the absolute gap when the
    /// reference is elastic.
    pub eqps_relative_error: f64,
    /// Largest interface displacement gap relative to the largest
    /// reference interface displacement.
    pub interface_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: String,
    pub accelerator: AcceleratorKind,
    pub status: RunStatus,
    pub aborted: Option<String>,
    pub totals: Totals,
    pub cutbacks: usize,
    pub accelerator_fallbacks: usize,
    pub final_residual: Option<f64>,
    pub mean_gl_iterations: f64,
    pub max_patch_eqps: f64,
    pub balance: Option<BalanceReport>,
    pub reference: Option<ReferenceSolution>,
    pub accuracy: Option<Accuracy>,
    /// Not serialized, so repeated runs write identical summaries.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    /// Process exit code: 0 converged, 2 diverged.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Converged => 0,
            RunStatus::Diverged => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub record: ConvergenceRecord,
    pub problem: CouplingProblem,
}

/// Builds, runs and (optionally) compares a case against its monolithic
/// reference. Artifacts go to `case.output.dir` when set.
pub fn run_case(case: &CaseFile, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    let case = opts.apply(case);
    let t0 = Instant::now();
    let (mut problem, _geo) = build_case(&case)?;
    let record = problem.run()?;
    let wall_seconds = t0.elapsed().as_secs_f64();
    let reference = if opts.reference {
        Some(solve_reference(&case)?.1)
    } else {
        None
    };
    let max_patch_eqps = problem.max_patch_eqps();
    let accuracy = reference
        .as_ref()
        .map(|r| accuracy(&problem, r, max_patch_eqps));
    let summary = RunSummary {
        case: case.name.clone(),
        accelerator: case.accelerator.kind,
        status: if record.converged() {
            RunStatus::Converged
        } else {
            RunStatus::Diverged
        },
        aborted: record.aborted.clone(),
        totals: record.totals(),
        cutbacks: record.cutbacks(),
        accelerator_fallbacks: problem.accelerator().fallbacks(),
        final_residual: record.final_residual(),
        mean_gl_iterations: record.mean_gl_iterations(),
        max_patch_eqps,
        balance: problem.verify_balance(),
        reference,
        accuracy,
        wall_seconds,
    };
    if let Some(dir) = &case.output.dir {
        write_artifacts(Path::new(dir), &summary, &record, &problem)?;
    }
    Ok(RunOutcome {
        summary,
        record,
        problem,
    })
}

fn accuracy(problem: &CouplingProblem, r: &ReferenceSolution, eqps: f64) -> Accuracy {
    let eqps_relative_error = if r.max_patch_eqps > 0.0 {
        (eqps - r.max_patch_eqps).abs() / r.max_patch_eqps
    } else {
        eqps.abs()
    };
    let u = problem.interface_displacements();
    let scale = r
        .interface_displacements
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = u
        .iter()
        .zip(&r.interface_displacements)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Accuracy {
        eqps_relative_error,
        interface_relative_error: if scale > 0.0 { gap / scale } else { gap },
    }
}

fn io<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct FieldRow {
    node: usize,
    x: f64,
    y: f64,
    ux: f64,
    uy: f64,
    eqps: f64,
}

/// Node-wise committed displacements and element-max plastic strain.
pub fn write_field_csv(model: &FeModel, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(io(path))?;
    let u = model.committed_displacements();
    let eqps = model.nodal_eqps();
    for (n, x) in model.mesh().nodes.iter().enumerate() {
        w.serialize(FieldRow {
            node: n,
            x: x[0],
            y: x[1],
            ux: u[2 * n],
            uy: u[2 * n + 1],
            eqps: eqps[n],
        })
        .map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// `convergence.csv`, `summary.json`, `global_field.csv` and one
/// `patch_<name>_field.csv` per patch. Timings are kept out of the CSVs so
/// repeated runs produce identical files.
pub fn write_artifacts(
    dir: &Path,
    summary: &RunSummary,
    record: &ConvergenceRecord,
    problem: &CouplingProblem,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    record.write_csv_file(&dir.join("convergence.csv"))?;
    let json = serde_json::to_string_pretty(summary).map_err(io(dir))?;
    let path = dir.join("summary.json");
    std::fs::write(&path, json + "\n").map_err(io(&path))?;
    write_field_csv(problem.global(), &dir.join("global_field.csv"))?;
    for p in problem.patches() {
        write_field_csv(&p.model, &dir.join(format!("patch_{}_field.csv", p.name)))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub accelerator: AcceleratorKind,
    pub status: RunStatus,
    pub n_g_inc: usize,
    pub n_g_iter: usize,
    pub n_l_inc: usize,
    pub n_l_iter: usize,
    pub n_gl: usize,
    pub cutbacks: usize,
    pub mean_gl_iterations: f64,
    pub max_patch_eqps: f64,
    pub final_residual: Option<f64>,
}

#[derive(Serialize)]
struct CurveRow {
    accelerator: AcceleratorKind,
    step: usize,
    increment: usize,
    attempt: usize,
    gl_iter: usize,
    residual_norm: f64,
}

/// Runs the case once per accelerator (in parallel, results in input
/// order) and writes `comparison.csv` and `gl_curves.csv` to `out`.
pub fn compare_accelerators(
    case: &CaseFile,
    kinds: &[AcceleratorKind],
    out: Option<&Path>,
) -> Result<Vec<(ComparisonRow, ConvergenceRecord)>, HarnessError> {
    let runs: Vec<Result<RunOutcome, HarnessError>> = kinds
        .par_iter()
        .map(|&k| {
            let opts = RunOptions {
                accelerator: Some(k),
                ..Default::default()
            };
            let mut c = case.clone();
            c.output.dir = None;
            run_case(&c, &opts)
        })
        .collect();
    let mut rows = Vec::with_capacity(kinds.len());
    for run in runs {
        let run = run?;
        let s = &run.summary;
        rows.push((
            ComparisonRow {
                accelerator: s.accelerator,
                status: s.status,
                n_g_inc: s.totals.n_g_inc,
                n_g_iter: s.totals.n_g_iter,
                n_l_inc: s.totals.n_l_inc,
                n_l_iter: s.totals.n_l_iter,
                n_gl: s.totals.n_gl,
                cutbacks: s.cutbacks,
                mean_gl_iterations: s.mean_gl_iterations,
                max_patch_eqps: s.max_patch_eqps,
                final_residual: s.final_residual,
            },
            run.record,
        ));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join("comparison.csv");
        let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
        for (row, _) in &rows {
            w.serialize(row).map_err(io(&path))?;
        }
        w.flush().map_err(io(&path))?;
        let path = dir.join("gl_curves.csv");
        let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
        for (row, rec) in &rows {
            for inc in &rec.increments {
                for g in &inc.iterations {
                    w.serialize(CurveRow {
                        accelerator: row.accelerator,
                        step: inc.step,
                        increment: inc.increment,
                        attempt: inc.attempt,
                        gl_iter: g.gl_iter,
                        residual_norm: g.residual_norm,
                    })
                    .map_err(io(&path))?;
                }
            }
        }
        w.flush().map_err(io(&path))?;
    }
    Ok(rows)
}
