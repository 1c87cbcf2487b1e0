//! CES technology, CES demand and the markup identities shared by the
//! simulator and the estimators.
//!
//! The production function is
//! `f(k, v) = (nu / rho) * ln(alpha * exp(rho k) + (1 - alpha) * exp(rho v))`
//! and is always evaluated in log-sum-exp form so that `|rho k|` and
//! `|rho v|` in the hundreds do not overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters `(alpha, rho, nu)` of the CES production function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    pub alpha: f64,
    pub rho: f64,
    pub nu: f64,
}

impl StructuralParams {
    pub fn new(alpha: f64, rho: f64, nu: f64) -> Result<Self> {
        let p = Self { alpha, rho, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        if !self.rho.is_finite() || self.rho == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "rho must be finite and nonzero, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Log-weights `(ln alpha + rho k, ln(1 - alpha) + rho v)` of the two inputs.
    #[inline]
    fn log_weights(&self, k: f64, v: f64) -> (f64, f64) {
        (
            self.alpha.ln() + self.rho * k,
            (1.0 - self.alpha).ln() + self.rho * v,
        )
    }
}

impl Default for StructuralParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            rho: -1.0,
            nu: 0.95,
        }
    }
}

/// Demand intercept and curvature shifter of the CES demand
/// `q* = delta1 - (1 + exp(-delta2)) p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandState {
    pub delta1: f64,
    pub delta2: f64,
}

impl DemandState {
    /// Price elasticity of demand, `1 + exp(-delta2) > 1`.
    #[inline]
    pub fn elasticity(&self) -> f64 {
        1.0 + (-self.delta2).exp()
    }

    /// Log output demanded at log price `p`.
    #[inline]
    pub fn demand(&self, p: f64) -> f64 {
        self.delta1 - self.elasticity() * p
    }
}

#[inline]
fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log planned output `f(k, v)`.
pub fn log_output(params: &StructuralParams, k: f64, v: f64) -> f64 {
    let (a, b) = params.log_weights(k, v);
    params.nu / params.rho * log_sum_exp(a, b)
}

/// Output elasticity of the variable input, `df/dv`, in `(0, nu)`.
pub fn output_elasticity_v(params: &StructuralParams, k: f64, v: f64) -> f64 {
    let (a, b) = params.log_weights(k, v);
    // share of the variable input = 1 / (1 + exp(a - b))
    let d = a - b;
    let share = if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    };
    params.nu * share
}

/// `ln(df/dv)`; stays finite where the elasticity itself underflows.
pub fn log_output_elasticity_v(params: &StructuralParams, k: f64, v: f64) -> f64 {
    let (a, b) = params.log_weights(k, v);
    params.nu.ln() - softplus(a - b)
}

/// Markup `1 + exp(delta2)`.
#[inline]
pub fn markup(delta2: f64) -> f64 {
    1.0 + delta2.exp()
}

/// Log markup `ln(1 + exp(delta2))`, evaluated stably.
#[inline]
pub fn log_markup(delta2: f64) -> f64 {
    softplus(delta2)
}

/// Log output price that clears the CES demand at log output `q_star`.
pub fn inverse_demand(state: &DemandState, q_star: f64) -> f64 {
    (state.delta1 - q_star) / state.elasticity()
}

/// `p + q - pV - v + ln(df/dv)`: the log markup plus the output disturbance.
pub fn log_markup_plus_noise(p: f64, q: f64, p_v: f64, v: f64, elasticity: f64) -> Result<f64> {
    if !(elasticity > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "output elasticity must be positive, got {elasticity}"
        )));
    }
    Ok(p + q - p_v - v + elasticity.ln())
}
