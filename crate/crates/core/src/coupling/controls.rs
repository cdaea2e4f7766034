use serde::{Deserialize, Serialize};

use super::CouplingError;
use crate::fem::NewtonControls;

/// How the complement-zone reaction `λ⁰` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComplementStrategy {
    /// Internal forces of the complement elements of the global solution.
    #[default]
    ExplicitSubdomain0,
    /// `A⁰λ⁰ = p - Σ A^s λ^{s,G}` from global-resolution copies of the patches.
    WorkaroundGlobalPatches,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InexactMode {
    /// Driver is the last change of the summed patch reactions.
    DeltaLambda,
    /// Driver is the interface residual of the previous GL iteration.
    PreviousResidual,
}

/// Inner Newton tolerances slaved to the outer residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InexactControl {
    pub alpha: f64,
    #[serde(default = "default_mode")]
    pub mode: InexactMode,
}

fn default_mode() -> InexactMode {
    InexactMode::PreviousResidual
}

impl InexactControl {
    pub fn previous_residual(alpha: f64) -> Self {
        Self {
            alpha,
            mode: InexactMode::PreviousResidual,
        }
    }

    /// Newton controls whose residual target is `alpha * driver` for a model
    /// whose last average flux was `flux`. Never tighter than `tight` and
    /// never looser than the relaxed preset.
    pub fn controls_for(&self, driver: f64, flux: f64, tight: NewtonControls) -> NewtonControls {
        if !(driver.is_finite() && flux > 0.0 && flux.is_finite()) {
            return tight;
        }
        let relaxed = NewtonControls::relaxed();
        let eps_r = (self.alpha * driver / flux).clamp(
            tight.residual_ratio_tol,
            relaxed.residual_ratio_tol.max(tight.residual_ratio_tol),
        );
        let eps_d = (2.0 * eps_r).clamp(
            tight.correction_ratio_tol,
            relaxed.correction_ratio_tol.max(tight.correction_ratio_tol),
        );
        NewtonControls {
            residual_ratio_tol: eps_r,
            correction_ratio_tol: eps_d,
            max_iterations: tight.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingControls {
    /// `|r|_inf` threshold in N.
    pub abs_tol: f64,
    /// `|r|_2` relative to the largest `|r|_2` of the increment.
    pub rel_inc_tol: f64,
    /// `|r|_2` relative to the largest `|r|_2` of the step.
    pub rel_step_tol: f64,
    pub max_gl_iterations: usize,
    pub strategy: ComplementStrategy,
    pub inexact: Option<InexactControl>,
}

impl Default for CouplingControls {
    fn default() -> Self {
        Self {
            abs_tol: 1e-3,
            rel_inc_tol: 1e-3,
            rel_step_tol: 1e-4,
            max_gl_iterations: 50,
            strategy: ComplementStrategy::default(),
            inexact: None,
        }
    }
}

impl CouplingControls {
    pub fn validate(&self) -> Result<(), CouplingError> {
        let bad = |m: &str| Err(CouplingError::InvalidInput(m.into()));
        if !(self.abs_tol > 0.0 && self.rel_inc_tol > 0.0 && self.rel_step_tol > 0.0) {
            return bad("GL tolerances must be positive");
        }
        if self.max_gl_iterations == 0 {
            return bad("max_gl_iterations must be positive");
        }
        if let Some(ix) = self.inexact {
            if !(ix.alpha > 0.0 && ix.alpha <= 0.5) {
                return bad("inexact alpha must lie in (0, 0.5]");
            }
        }
        Ok(())
    }

    /// Evaluated in a fixed order: absolute, increment-relative, step-relative.
    pub fn converged(&self, r_inf: f64, r_norm: f64, increment_max: f64, step_max: f64) -> bool {
        r_inf <= self.abs_tol
            || r_norm <= self.rel_inc_tol * increment_max
            || r_norm <= self.rel_step_tol * step_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncrementationPolicy {
    pub initial_fraction: f64,
    pub max_fraction: f64,
    pub min_fraction: f64,
    pub cutback_factor: f64,
    pub growth_factor: f64,
    /// An increment is fast when it needs at most this many GL iterations
    /// (Newton iterations for a standalone model).
    pub fast_iteration_threshold: usize,
    /// Consecutive cutbacks tolerated on one increment.
    pub max_cutbacks: usize,
}

impl Default for IncrementationPolicy {
    fn default() -> Self {
        Self {
            initial_fraction: 1.0 / 50.0,
            max_fraction: 1.0 / 10.0,
            min_fraction: 1e-6,
            cutback_factor: 0.5,
            growth_factor: 1.5,
            fast_iteration_threshold: 6,
            max_cutbacks: 5,
        }
    }
}

impl IncrementationPolicy {
    pub fn validate(&self) -> Result<(), CouplingError> {
        let bad = |m: &str| Err(CouplingError::InvalidInput(m.into()));
        if !(self.initial_fraction > 0.0
            && self.initial_fraction <= self.max_fraction
            && self.max_fraction <= 1.0)
        {
            return bad("fractions must satisfy 0 < initial_fraction <= max_fraction <= 1");
        }
        if !(self.min_fraction > 0.0 && self.min_fraction <= self.initial_fraction) {
            return bad("min_fraction must lie in (0, initial_fraction]");
        }
        if !(self.cutback_factor > 0.0 && self.cutback_factor < 1.0) {
            return bad("cutback_factor must lie in (0, 1)");
        }
        if self.growth_factor < 1.0 {
            return bad("growth_factor must be at least 1");
        }
        Ok(())
    }

    pub fn start(&self) -> Incrementer {
        Incrementer {
            policy: self.clone(),
            fraction: 0.0,
            size: self.initial_fraction,
            fast_streak: 0,
            cutbacks: 0,
        }
    }
}

/// Step-fraction bookkeeping for one step.
#[derive(Debug, Clone)]
pub struct Incrementer {
    policy: IncrementationPolicy,
    fraction: f64,
    size: f64,
    fast_streak: usize,
    cutbacks: usize,
}

impl Incrementer {
    pub fn done(&self) -> bool {
        self.fraction >= 1.0
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    /// Next `(start, end)` step fractions, the last one landing exactly on 1.
    pub fn next_range(&self) -> (f64, f64) {
        let end = self.fraction + self.size;
        if end >= 1.0 - 1e-12 {
            (self.fraction, 1.0)
        } else {
            (self.fraction, end)
        }
    }

    /// Records a converged increment that needed `iterations`.
    pub fn accept(&mut self, end: f64, iterations: usize) {
        self.fraction = end;
        self.cutbacks = 0;
        if iterations <= self.policy.fast_iteration_threshold {
            self.fast_streak += 1;
            if self.fast_streak >= 2 {
                self.size = (self.size * self.policy.growth_factor).min(self.policy.max_fraction);
                self.fast_streak = 0;
            }
        } else {
            self.fast_streak = 0;
        }
    }

    /// Cuts the increment back; `false` once the cutback budget or the
    /// minimum size is exhausted.
    pub fn cut_back(&mut self) -> bool {
        self.cutbacks += 1;
        self.fast_streak = 0;
        self.size *= self.policy.cutback_factor;
        self.cutbacks <= self.policy.max_cutbacks && self.size >= self.policy.min_fraction
    }
}
