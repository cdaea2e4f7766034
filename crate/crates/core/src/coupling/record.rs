use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CouplingError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlIteration {
    pub gl_iter: usize,
    /// Euclidean norm of the interface residual.
    pub residual_norm: f64,
    pub residual_inf: f64,
    pub global_newton_iters: usize,
    pub patch_newton_iters: Vec<usize>,
}

/// One attempt at an increment; failed attempts are kept for the totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementRecord {
    pub step: usize,
    /// Index among the committed increments of the step.
    pub increment: usize,
    pub attempt: usize,
    pub fraction_start: f64,
    pub fraction_end: f64,
    pub load_start: f64,
    pub load_end: f64,
    pub converged: bool,
    pub iterations: Vec<GlIteration>,
}

impl IncrementRecord {
    pub fn gl_iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn global_newton_iters(&self) -> usize {
        self.iterations.iter().map(|g| g.global_newton_iters).sum()
    }

    pub fn local_newton_iters(&self) -> usize {
        self.iterations
            .iter()
            .map(|g| g.patch_newton_iters.iter().sum::<usize>())
            .sum()
    }
}

/// The five performance counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Totals {
    pub n_g_inc: usize,
    pub n_g_iter: usize,
    pub n_l_inc: usize,
    pub n_l_iter: usize,
    pub n_gl: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConvergenceRecord {
    pub num_patches: usize,
    pub increments: Vec<IncrementRecord>,
    /// Reason for an aborted run.
    pub aborted: Option<String>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    step: usize,
    increment: usize,
    attempt: usize,
    converged: bool,
    fraction_start: f64,
    fraction_end: f64,
    gl_iter: usize,
    residual_norm: f64,
    residual_inf: f64,
    global_newton_iters: usize,
    patch_newton_iters: &'a str,
}

impl ConvergenceRecord {
    pub fn new(num_patches: usize) -> Self {
        Self {
            num_patches,
            ..Default::default()
        }
    }

    pub fn converged(&self) -> bool {
        self.aborted.is_none()
    }

    pub fn committed(&self) -> impl Iterator<Item = &IncrementRecord> {
        self.increments.iter().filter(|i| i.converged)
    }

    /// Increment counts are committed increments; iteration counts include
    /// failed attempts.
    pub fn totals(&self) -> Totals {
        let committed = self.committed().count();
        Totals {
            n_g_inc: committed,
            n_g_iter: self
                .increments
                .iter()
                .map(IncrementRecord::global_newton_iters)
                .sum(),
            n_l_inc: committed,
            n_l_iter: self
                .increments
                .iter()
                .map(IncrementRecord::local_newton_iters)
                .sum(),
            n_gl: self
                .increments
                .iter()
                .map(IncrementRecord::gl_iterations)
                .sum(),
        }
    }

    pub fn cutbacks(&self) -> usize {
        self.increments.iter().filter(|i| !i.converged).count()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.committed()
            .last()
            .and_then(|i| i.iterations.last())
            .map(|g| g.residual_norm)
    }

    /// Mean GL iterations over committed increments.
    pub fn mean_gl_iterations(&self) -> f64 {
        let n = self.committed().count();
        if n == 0 {
            return 0.0;
        }
        self.committed()
            .map(|i| i.gl_iterations() as f64)
            .sum::<f64>()
            / n as f64
    }

    /// One row per GL iteration. Patch iteration counts are joined by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CouplingError> {
        let mut w = csv::Writer::from_writer(out);
        for inc in &self.increments {
            for g in &inc.iterations {
                let patches = g
                    .patch_newton_iters
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                w.serialize(CsvRow {
                    step: inc.step,
                    increment: inc.increment,
                    attempt: inc.attempt,
                    converged: inc.converged,
                    fraction_start: inc.fraction_start,
                    fraction_end: inc.fraction_end,
                    gl_iter: g.gl_iter,
                    residual_norm: g.residual_norm,
                    residual_inf: g.residual_inf,
                    global_newton_iters: g.global_newton_iters,
                    patch_newton_iters: &patches,
                })
                .map_err(|e| CouplingError::Io(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| CouplingError::Io(e.to_string()))
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<(), CouplingError> {
        let f = std::fs::File::create(path)
            .map_err(|e| CouplingError::Io(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gl(n: usize, g: usize, l: &[usize]) -> GlIteration {
        GlIteration {
            gl_iter: n,
            residual_norm: 1.0 / (n + 1) as f64,
            residual_inf: 0.5,
            global_newton_iters: g,
            patch_newton_iters: l.to_vec(),
        }
    }

    fn inc(converged: bool, its: Vec<GlIteration>) -> IncrementRecord {
        IncrementRecord {
            step: 0,
            increment: 0,
            attempt: 0,
            fraction_start: 0.0,
            fraction_end: 0.1,
            load_start: 0.0,
            load_end: 0.1,
            converged,
            iterations: its,
        }
    }

    #[test]
    fn totals_are_sums() {
        let rec = ConvergenceRecord {
            num_patches: 2,
            increments: vec![
                inc(false, vec![gl(0, 3, &[2, 2])]),
                inc(true, vec![gl(0, 2, &[1, 4]), gl(1, 1, &[1, 1])]),
            ],
            aborted: None,
        };
        let t = rec.totals();
        assert_eq!(
            t,
            Totals {
                n_g_inc: 1,
                n_g_iter: 6,
                n_l_inc: 1,
                n_l_iter: 11,
                n_gl: 3
            }
        );
        assert_eq!(rec.cutbacks(), 1);
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().ends_with(",2,1;4"));
    }
}
