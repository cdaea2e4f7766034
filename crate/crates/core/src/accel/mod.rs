//! Fixed-point accelerators for `p_{j+1} = update(p_j, p̃_j)` with
//! `r_j = p̃_j - p_j`.
//!
//! All kinds map `r_j = 0` to `p_{j+1} = p_j`. Secant datasets hold
//! `W = [Δp̃]` and `V = [Δr]` built from consecutive calls within one
//! increment.

pub mod history;
pub mod jacobian;
pub mod vector;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use history::{FilteredQr, SecantColumn, SecantHistory};
pub use jacobian::LowRankInverseJacobian;
pub use vector::{InterfaceLayout, InterfaceVector};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AccelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid accelerator configuration: {0}")]
    InvalidConfig(String),
    #[error("interface vectors belong to different layouts")]
    LayoutMismatch,
    #[error("non-finite interface values")]
    NonFinite,
    #[error("residual difference vanishes")]
    DegenerateHistory,
    #[error("no independent secant columns")]
    EmptyHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceleratorKind {
    #[serde(alias = "none")]
    Constant,
    Aitken,
    Anderson,
    Broyden,
}

impl AcceleratorKind {
    pub const ALL: [AcceleratorKind; 4] = [
        AcceleratorKind::Constant,
        AcceleratorKind::Aitken,
        AcceleratorKind::Anderson,
        AcceleratorKind::Broyden,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AcceleratorKind::Constant => "constant",
            AcceleratorKind::Aitken => "aitken",
            AcceleratorKind::Anderson => "anderson",
            AcceleratorKind::Broyden => "broyden",
        }
    }
}

impl std::str::FromStr for AcceleratorKind {
    type Err = AccelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" | "none" => Ok(AcceleratorKind::Constant),
            "aitken" => Ok(AcceleratorKind::Aitken),
            "anderson" => Ok(AcceleratorKind::Anderson),
            "broyden" => Ok(AcceleratorKind::Broyden),
            other => Err(AccelError::InvalidConfig(format!(
                "unknown accelerator {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for AcceleratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What survives from one increment to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryPolicy {
    /// Drop all secant columns; Aitken restarts from `omega`.
    Clear,
    /// Keep the columns of the last `k` increments (`Retain(0)` is `Clear`).
    Retain(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceleratorConfig {
    pub kind: AcceleratorKind,
    /// Constant relaxation factor, Aitken seed and first multi-secant step.
    pub omega: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub max_columns: usize,
    pub drop_tolerance: f64,
    pub max_rank: usize,
    pub truncation_tolerance: f64,
    /// `None` selects the per-kind default (see [`AcceleratorConfig::policy`]).
    pub history: Option<HistoryPolicy>,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        Self {
            kind: AcceleratorKind::Aitken,
            omega: 0.1,
            omega_min: 1e-4,
            omega_max: 2.0,
            max_columns: 100,
            drop_tolerance: 1e-8,
            max_rank: 50,
            truncation_tolerance: 1e-12,
            history: None,
        }
    }
}

impl AcceleratorConfig {
    pub fn new(kind: AcceleratorKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    /// Broyden keeps its information in the Jacobian, so its columns are
    /// cleared; the other kinds keep the previous increment.
    pub fn policy(&self) -> HistoryPolicy {
        self.history.unwrap_or(match self.kind {
            AcceleratorKind::Broyden => HistoryPolicy::Clear,
            _ => HistoryPolicy::Retain(1),
        })
    }

    pub fn validate(&self) -> Result<(), AccelError> {
        let bad = |m: &str| Err(AccelError::InvalidConfig(m.into()));
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad("omega must be positive");
        }
        if !(self.omega_min > 0.0 && self.omega_min <= self.omega_max && self.omega_max.is_finite())
        {
            return bad("omega bounds must satisfy 0 < omega_min <= omega_max");
        }
        if self.max_columns == 0 || self.max_rank == 0 {
            return bad("max_columns and max_rank must be positive");
        }
        if !(self.drop_tolerance > 0.0 && self.drop_tolerance < 1.0) {
            return bad("drop_tolerance must lie in (0, 1)");
        }
        if !(self.truncation_tolerance >= 0.0 && self.truncation_tolerance < 1.0) {
            return bad("truncation_tolerance must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Aitken factor `ω_j = -ω_{j-1} r_{j-1}^T Δr / |Δr|²`, clamped to `bounds`.
pub fn aitken_omega(
    omega_prev: f64,
    r_prev: &InterfaceVector,
    r_curr: &InterfaceVector,
    bounds: (f64, f64),
) -> Result<f64, AccelError> {
    if !r_prev.same_layout(r_curr) {
        return Err(AccelError::LayoutMismatch);
    }
    aitken_raw(omega_prev, r_prev.as_dvector(), r_curr.as_dvector())
        .map(|w| w.clamp(bounds.0, bounds.1))
}

fn aitken_raw(
    omega_prev: f64,
    r_prev: &DVector<f64>,
    r_curr: &DVector<f64>,
) -> Result<f64, AccelError> {
    let dr = r_curr - r_prev;
    let den = dr.norm_squared();
    if !(den > 0.0) {
        return Err(AccelError::DegenerateHistory);
    }
    let w = -omega_prev * r_prev.dot(&dr) / den;
    if w.is_finite() {
        Ok(w)
    } else {
        Err(AccelError::DegenerateHistory)
    }
}

/// Result of a multi-secant step.
#[derive(Debug, Clone)]
pub struct SecantStep {
    pub p_next: DVector<f64>,
    /// Least-squares coefficients `α = -U^{-1} Q^T r` on the filtered columns.
    pub coefficients: DVector<f64>,
    pub qr: FilteredQr,
}

/// Anderson step `p̃ + W α` with `α = argmin |V α + r|`.
pub fn anderson_step(
    history: &mut SecantHistory,
    r: &DVector<f64>,
    p_tilde: &DVector<f64>,
) -> Result<SecantStep, AccelError> {
    let qr = history.filter().ok_or(AccelError::EmptyHistory)?;
    let alpha = -qr.z_apply(r);
    let p_next = p_tilde + &qr.w * &alpha;
    Ok(SecantStep {
        p_next,
        coefficients: alpha,
        qr,
    })
}

/// Multi-secant correction `J = J_base + D Z` of a base inverse Jacobian,
/// with `D = W - J_base V` and `Z = U^{-1} Q^T`.
#[derive(Debug, Clone)]
pub struct MultiSecantUpdate {
    pub d: DMatrix<f64>,
    pub qr: FilteredQr,
}

impl MultiSecantUpdate {
    pub fn new(base: &LowRankInverseJacobian, qr: FilteredQr) -> Self {
        let d = &qr.w - base.apply_matrix(&qr.v);
        Self { d, qr }
    }

    pub fn apply(&self, base: &LowRankInverseJacobian, x: &DVector<f64>) -> DVector<f64> {
        base.apply(x) + &self.d * self.qr.z_apply(x)
    }

    /// Folds the correction into `base`.
    pub fn fold_into(&self, base: &mut LowRankInverseJacobian) {
        base.add_low_rank(&self.d, &self.qr.z_transpose());
    }
}

/// Broyden step `p̃ - J r` with the multi-secant update of `jacobian`.
pub fn broyden_step(
    jacobian: &LowRankInverseJacobian,
    history: &mut SecantHistory,
    r: &DVector<f64>,
    p_tilde: &DVector<f64>,
) -> Result<(DVector<f64>, MultiSecantUpdate), AccelError> {
    let qr = history.filter().ok_or(AccelError::EmptyHistory)?;
    let update = MultiSecantUpdate::new(jacobian, qr);
    let p_next = p_tilde - update.apply(jacobian, r);
    Ok((p_next, update))
}

#[derive(Debug, Clone)]
struct Snapshot {
    p: DVector<f64>,
    p_tilde: DVector<f64>,
    r: DVector<f64>,
}

/// Per-run accelerator state owned by the coupling loop.
#[derive(Debug, Clone)]
pub struct AcceleratorState {
    config: AcceleratorConfig,
    omega: f64,
    history: SecantHistory,
    jacobian: Option<LowRankInverseJacobian>,
    previous: Option<Snapshot>,
    increment: usize,
    fallbacks: usize,
}

impl AcceleratorState {
    pub fn new(config: AcceleratorConfig) -> Result<Self, AccelError> {
        config.validate()?;
        Ok(Self {
            omega: config.omega,
            history: SecantHistory::new(config.max_columns, config.drop_tolerance),
            jacobian: None,
            previous: None,
            increment: 0,
            fallbacks: 0,
            config,
        })
    }

    pub fn config(&self) -> &AcceleratorConfig {
        &self.config
    }

    pub fn kind(&self) -> AcceleratorKind {
        self.config.kind
    }

    /// Current relaxation factor (Aitken, and the fallback of the
    /// multi-secant kinds).
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn history(&self) -> &SecantHistory {
        &self.history
    }

    pub fn jacobian(&self) -> Option<&LowRankInverseJacobian> {
        self.jacobian.as_ref()
    }

    /// Number of multi-secant steps that found no usable column.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn previous_p(&self) -> Option<&DVector<f64>> {
        self.previous.as_ref().map(|s| &s.p)
    }

    pub fn previous_r(&self) -> Option<&DVector<f64>> {
        self.previous.as_ref().map(|s| &s.r)
    }

    /// `J_base = (1 - ω) I`, so that an empty history gives `p + ω r`.
    fn base_jacobian(&mut self, n: usize) -> &mut LowRankInverseJacobian {
        let (omega, rank, tol) = (
            self.config.omega,
            self.config.max_rank,
            self.config.truncation_tolerance,
        );
        if self.jacobian.as_ref().is_none_or(|j| j.dim() != n) {
            self.jacobian = Some(LowRankInverseJacobian::new(n, 1.0 - omega, rank, tol));
        }
        self.jacobian.as_mut().expect("initialized")
    }

    fn relaxed(&mut self, p: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        if let Some(prev) = &self.previous {
            match aitken_raw(self.omega, &prev.r, r) {
                Ok(w) => self.omega = w.clamp(self.config.omega_min, self.config.omega_max),
                Err(_) => log::debug!(
                    "aitken: degenerate residual history, keeping omega {}",
                    self.omega
                ),
            }
        }
        p + r * self.omega
    }

    pub fn accelerate(
        &mut self,
        p: &InterfaceVector,
        p_tilde: &InterfaceVector,
    ) -> Result<InterfaceVector, AccelError> {
        if !p.same_layout(p_tilde) {
            return Err(AccelError::LayoutMismatch);
        }
        let n = p.len();
        if let Some(prev) = &self.previous {
            if prev.p.len() != n {
                return Err(AccelError::LayoutMismatch);
            }
        }
        let pv = p.as_dvector();
        let ptv = p_tilde.as_dvector();
        let r = ptv - pv;
        let increment = self.increment;
        if matches!(
            self.config.kind,
            AcceleratorKind::Anderson | AcceleratorKind::Broyden
        ) {
            if let Some(prev) = &self.previous {
                self.history
                    .push(ptv - &prev.p_tilde, &r - &prev.r, increment);
            }
        }
        let next = match self.config.kind {
            AcceleratorKind::Constant => pv + &r * self.config.omega,
            AcceleratorKind::Aitken => self.relaxed(pv, &r),
            AcceleratorKind::Anderson => {
                if self.history.is_empty() {
                    pv + &r * self.config.omega
                } else {
                    match anderson_step(&mut self.history, &r, ptv) {
                        Ok(step) => step.p_next,
                        Err(_) => {
                            self.fallbacks += 1;
                            log::warn!("anderson: all secant columns filtered out, relaxed step");
                            self.relaxed(pv, &r)
                        }
                    }
                }
            }
            AcceleratorKind::Broyden => {
                let base = self.base_jacobian(n).clone();
                if self.history.is_empty() {
                    ptv - base.apply(&r)
                } else {
                    match broyden_step(&base, &mut self.history, &r, ptv) {
                        Ok((p_next, _)) => p_next,
                        Err(_) => {
                            self.fallbacks += 1;
                            log::warn!(
                                "broyden: all secant columns filtered out, base Jacobian step"
                            );
                            ptv - base.apply(&r)
                        }
                    }
                }
            }
        };
        self.previous = Some(Snapshot {
            p: pv.clone(),
            p_tilde: ptv.clone(),
            r,
        });
        InterfaceVector::from_dvector(p.layout().clone(), next)
    }

    /// Called once an increment has converged. Broyden folds its secant
    /// update into the persistent Jacobian before `policy` is applied.
    pub fn reset_for_increment(&mut self, policy: HistoryPolicy) {
        if self.config.kind == AcceleratorKind::Broyden {
            let n = self.history.columns().next().map(|c| c.v.len());
            if let Some(n) = n {
                let base = self.base_jacobian(n).clone();
                if let Some(qr) = self.history.filter() {
                    let update = MultiSecantUpdate::new(&base, qr);
                    update.fold_into(self.jacobian.as_mut().expect("initialized"));
                }
            }
        }
        self.increment += 1;
        match policy {
            HistoryPolicy::Clear | HistoryPolicy::Retain(0) => {
                self.history.clear();
                self.omega = self.config.omega;
            }
            HistoryPolicy::Retain(k) => self.history.retain_from(self.increment.saturating_sub(k)),
        }
        self.previous = None;
    }

    /// [`AcceleratorState::reset_for_increment`] with the configured policy.
    pub fn complete_increment(&mut self) {
        self.reset_for_increment(self.config.policy());
    }

    /// Forgets everything learned during the current (failed) increment.
    pub fn discard_increment(&mut self) {
        self.history.remove_increment(self.increment);
        self.previous = None;
        self.omega = self.config.omega;
    }
}
