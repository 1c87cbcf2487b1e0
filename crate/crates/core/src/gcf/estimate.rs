use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ces::{self, StructuralParams};
use crate::dgp::FirmPanel;
use crate::error::{Error, Result};
use crate::optim::{from_unconstrained, multistart, to_unconstrained, OptimizerOptions};

use super::frame::{build_lagged_frame, EstimationTable};
use super::moments::{
    orthogonal_residual, orthogonalized_moments_unprojected, residual, InstrumentPlan, Projections,
};
use super::weighting::{WeightingMatrix, WeightingMode};

/// Objective value reported for parameters where the moments cannot be evaluated.
pub const OBJECTIVE_PENALTY: f64 = 1e30;

/// Neutral starting point for the optimizer.
pub fn neutral_start() -> StructuralParams {
    StructuralParams {
        alpha: 0.5,
        rho: -0.5,
        nu: 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub weighting: WeightingMode,
    pub optimizer: OptimizerOptions,
    pub start: StructuralParams,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            weighting: WeightingMode::Oracle {
                theta: StructuralParams::default(),
            },
            optimizer: OptimizerOptions::default(),
            start: neutral_start(),
        }
    }
}

/// Outcome of one estimation run.
///
/// JSON field names: `method`, `control_degree` (null for the baseline),
/// `weighting`, `theta_hat` (`alpha`, `rho`, `nu`), `avg_log_markup`,
/// `objective_value`, `selected_moment_count`, `n_obs`, `iterations`,
/// `evaluations`, `gradient_norm`, `converged`,
/// `weighting_condition_number`, `seed` (null unless set by the caller).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: String,
    pub control_degree: Option<usize>,
    pub weighting: String,
    pub theta_hat: StructuralParams,
    pub avg_log_markup: f64,
    pub objective_value: f64,
    pub selected_moment_count: usize,
    pub n_obs: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub weighting_condition_number: f64,
    pub seed: Option<u64>,
}

impl EstimationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `m' W m` for the orthogonalized moments; [`OBJECTIVE_PENALTY`] when the
/// moments are undefined or the value is not finite.
pub fn gmm_objective(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
    w: &WeightingMatrix,
) -> f64 {
    match orthogonalized_moments_unprojected(theta, table, proj) {
        Ok(m) => finite_or_penalty(w.objective(&m)),
        Err(_) => OBJECTIVE_PENALTY,
    }
}

fn finite_or_penalty(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        OBJECTIVE_PENALTY
    }
}

/// The objective as minimized: moments in the orthogonal coordinates of
/// `proj.ortho`, with `w` expressed in the same coordinates.
fn ortho_objective(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
    w: &WeightingMatrix,
) -> f64 {
    match residual(theta, table) {
        Ok(r) => finite_or_penalty(w.objective(&proj.ortho.moments(&r))),
        Err(_) => OBJECTIVE_PENALTY,
    }
}

/// Weighting in the coordinates of `proj.ortho`, at `theta`.
fn ortho_weighting(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
) -> Result<WeightingMatrix> {
    proj.ortho
        .covariance_weighting(&orthogonal_residual(theta, table, proj)?)
}

/// Sample mean of the log markup plus noise at `theta` over the table rows.
pub fn avg_log_markup(theta: &StructuralParams, table: &EstimationTable) -> Result<f64> {
    let mut sum = 0.0;
    for r in 0..table.len() {
        let e = ces::output_elasticity_v(theta, table.k[r], table.v[r]);
        sum += ces::log_markup_plus_noise(table.p[r], table.q[r], table.p_v[r], table.v[r], e)
            .map_err(|err| err.at(table.firm[r], table.period[r] as i64))?;
    }
    Ok(sum / table.len() as f64)
}

pub fn estimate(
    panel: &FirmPanel,
    plan: &InstrumentPlan,
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    let table = build_lagged_frame(panel)?;
    estimate_table(&table, plan, options)
}

/// GMM on the orthogonalized moments for an already lagged table.
pub fn estimate_table(
    table: &EstimationTable,
    plan: &InstrumentPlan,
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    options.start.validate()?;
    let proj = Projections::build(table, plan)?;
    let dim = proj.n_moments();
    let run = |w: &WeightingMatrix, x0: &DVector<f64>| {
        multistart(
            |u: &DVector<f64>| ortho_objective(&from_unconstrained(u), table, &proj, w),
            x0,
            &options.optimizer,
        )
    };
    let x0 = to_unconstrained(&options.start);

    let (w, fit) = match options.weighting {
        WeightingMode::Identity => {
            let w = proj.ortho.identity_weighting();
            let fit = run(&w, &x0);
            (w, fit)
        }
        WeightingMode::Oracle { theta } => {
            let w = ortho_weighting(&theta, table, &proj)?;
            let fit = run(&w, &x0);
            (w, fit)
        }
        WeightingMode::TwoStep => {
            let first = run(&proj.ortho.identity_weighting(), &x0);
            let w = ortho_weighting(&from_unconstrained(&first.x), table, &proj)?;
            let fit = run(&w, &first.x);
            (w, fit)
        }
    };

    let theta_hat = from_unconstrained(&fit.x);
    if !fit.converged {
        warn!(
            "GMM did not converge: gradient norm {:.3e} after {} iterations",
            fit.gradient_norm, fit.iterations
        );
    }
    if fit.value >= OBJECTIVE_PENALTY {
        return Err(Error::Numerical(
            "objective undefined at every start".into(),
        ));
    }
    Ok(EstimationResult {
        method: "gcf".into(),
        control_degree: Some(plan.control_degree),
        weighting: options.weighting.label().into(),
        avg_log_markup: avg_log_markup(&theta_hat, table)?,
        theta_hat,
        objective_value: fit.value,
        selected_moment_count: dim,
        n_obs: table.len(),
        iterations: fit.iterations,
        evaluations: fit.evaluations,
        gradient_norm: fit.gradient_norm,
        converged: fit.converged,
        weighting_condition_number: w.condition_number,
        seed: None,
    })
}
