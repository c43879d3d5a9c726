//! Adaptive extrapolation parameter with restart.

use crate::error::{Error, Result};

/// `[β₀, β̃, γ, γ̃, η]` together with the running values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrapolationState {
    pub beta: f64,
    pub beta_bar: f64,
    pub beta_old: f64,
    pub gamma: f64,
    pub gamma_bar: f64,
    pub eta: f64,
}

impl ExtrapolationState {
    /// Tuple ordering is `[β₀, β̃, γ, γ̃, η]`.
    pub fn new(tuple: [f64; 5]) -> Result<Self> {
        let [beta, beta_bar, gamma, gamma_bar, eta] = tuple;
        if !(1.0 < gamma_bar && gamma_bar <= gamma && gamma <= eta) {
            return Err(Error::InvalidArgument(format!(
                "extrapolation factors need 1 < γ̃ <= γ <= η, got γ̃={gamma_bar}, γ={gamma}, η={eta}"
            )));
        }
        if !(0.0..=1.0).contains(&beta_bar) || !(0.0..=beta_bar).contains(&beta) {
            return Err(Error::InvalidArgument(format!(
                "extrapolation needs 0 <= β <= β̃ <= 1, got β={beta}, β̃={beta_bar}"
            )));
        }
        Ok(ExtrapolationState {
            beta,
            beta_bar,
            beta_old: beta,
            gamma,
            gamma_bar,
            eta,
        })
    }

    pub fn update(self, error_decreased: bool) -> Self {
        update_beta(self, error_decreased)
    }
}

pub const DEFAULT_TUPLE: [f64; 5] = [0.25, 1.0, 1.05, 1.01, 1.5];
pub const BCD_TUPLE: [f64; 5] = [0.75, 1.0, 1.05, 1.01, 1.5];

/// One step of the β schedule; β̃ never grows past one.
pub fn update_beta(state: ExtrapolationState, error_decreased: bool) -> ExtrapolationState {
    let mut s = state;
    if error_decreased {
        s.beta_old = s.beta;
        s.beta = s.beta_bar.min(s.gamma * s.beta);
        s.beta_bar = (s.gamma_bar * s.beta_bar).min(1.0);
    } else {
        s.beta_bar = s.beta_old;
        s.beta /= s.eta;
    }
    s
}
