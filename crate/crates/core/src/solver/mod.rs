//! Solvers for the rank-`r` Hadamard decomposition and their shared run bookkeeping.

mod driver;
pub mod manbcd;
pub mod projbcd;
pub mod standard;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extrapolation::DEFAULT_TUPLE;
use crate::factors::HadamardFactors;

pub use manbcd::{manbcd, manbcd_euler_step};
pub use projbcd::{projbcd, projected_gradient_step};
pub use standard::{grad_phi, hess_phi_action, rgd_standard, FixedRankPoint};

/// Consecutive rejected steps with `β < 1e-6` after which a run counts as stagnated.
pub const STAGNATION_REJECTIONS: usize = 100;
const STAGNATION_BETA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Fraction of `1/L` used as step size, in `(0, 2)`.
    pub tau: f64,
    pub k_w: usize,
    pub k_h: usize,
    pub max_iters: usize,
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
    /// Stop once the relative error is at most this value.
    pub tol: f64,
    /// `[β₀, β̃, γ, γ̃, η]`.
    pub extrapolation: [f64; 5],
    pub use_extrapolation: bool,
    pub use_rescaling: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: 0.95,
            k_w: 2,
            k_h: 2,
            max_iters: 100_000,
            time_limit: f64::INFINITY,
            tol: 0.0,
            extrapolation: DEFAULT_TUPLE,
            use_extrapolation: true,
            use_rescaling: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 2.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 2), got {}", self.tau)));
        }
        if self.k_w == 0 || self.k_h == 0 {
            return Err(Error::InvalidArgument("k_W and k_H must be at least 1".into()));
        }
        if self.time_limit.is_nan() || self.time_limit < 0.0 {
            return Err(Error::InvalidArgument("time limit must be nonnegative".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidArgument("tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    MaxIters,
    TimeLimit,
    Stagnation,
    ZeroInput,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Tolerance => "tolerance",
            StopReason::MaxIters => "max_iters",
            StopReason::TimeLimit => "time_limit",
            StopReason::Stagnation => "stagnation",
            StopReason::ZeroInput => "zero_input",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub rel_error: f64,
    pub elapsed: f64,
    /// Extrapolation parameter (step size for the Riemannian solver) used in this iteration.
    pub beta: f64,
    pub accepted: bool,
}

/// Per-step checks collected by the row-flow update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlowDiagnostics {
    /// Largest `|‖x_i‖ − 1|` or `|‖y_i‖ − 1|` after renormalization.
    pub max_unit_deviation: f64,
    /// Largest relative change of `μ_i/ν_i` over one step.
    pub max_ratio_drift: f64,
    /// Largest norm drift before renormalization.
    pub max_pre_drift: f64,
    /// Largest norm drift before renormalization divided by the squared row step.
    pub max_pre_drift_over_h2: f64,
    /// Smallest `1 − ϑ_i h_i/ρ_i` over rows with `ϑ_i > 0`.
    pub min_omega_sq: f64,
}

impl FlowDiagnostics {
    pub fn new() -> Self {
        FlowDiagnostics {
            min_omega_sq: f64::INFINITY,
            ..Default::default()
        }
    }

    pub fn merge(&mut self, other: &FlowDiagnostics) {
        self.max_unit_deviation = self.max_unit_deviation.max(other.max_unit_deviation);
        self.max_ratio_drift = self.max_ratio_drift.max(other.max_ratio_drift);
        self.max_pre_drift = self.max_pre_drift.max(other.max_pre_drift);
        self.max_pre_drift_over_h2 = self.max_pre_drift_over_h2.max(other.max_pre_drift_over_h2);
        self.min_omega_sq = self.min_omega_sq.min(other.min_omega_sq);
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub algo: String,
    pub trace: Vec<IterationRecord>,
    /// Factors approximating the original, un-normalized input.
    pub factors: HadamardFactors,
    pub initial_error: f64,
    pub best_error: f64,
    pub iterations: usize,
    pub accepted_iterations: usize,
    pub elapsed: f64,
    pub stop: StopReason,
    /// Present for the row-flow solver only.
    pub flow: Option<FlowDiagnostics>,
}

impl RunRecord {
    /// Initial error followed by the errors of accepted iterations.
    pub fn accepted_errors(&self) -> Vec<f64> {
        std::iter::once(self.initial_error)
            .chain(self.trace.iter().filter(|t| t.accepted).map(|t| t.rel_error))
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.accepted_errors().windows(2).all(|w| w[1] <= w[0])
    }
}

pub(crate) fn check_init(init: &HadamardFactors, m: usize, n: usize, r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if init.rows() != m || init.cols() != n || init.rank() != r {
        return Err(Error::dims(
            "solver init",
            format!(
                "X is {m}x{n} at rank {r}, factors are {}x{} at rank {}",
                init.rows(),
                init.cols(),
                init.rank()
            ),
        ));
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial factors".into()));
    }
    Ok(())
}

pub(crate) fn stagnated(rejections: usize, beta: f64) -> bool {
    rejections >= STAGNATION_REJECTIONS && beta < STAGNATION_BETA
}
