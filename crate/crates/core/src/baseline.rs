//! Proxy-variable style comparison estimator.
//!
//! A first stage regresses lagged output on a Hermite basis of the
//! instruments; lagged productivity is then recovered as the fitted value
//! minus `f(k_{t-1}, v_{t-1}; theta)`, and the second stage imposes a scalar
//! Markov law of motion `omega_t = g(omega_{t-1}) + xi_t`, with `g` a
//! univariate Hermite polynomial whose coefficients are concentrated out of
//! the GMM objective.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ces::{self, StructuralParams};
use crate::dgp::FirmPanel;
use crate::error::{Error, Result};
use crate::features::{hermite_values, FeatureSpec, OrthoBasis};
use crate::gcf::{
    avg_log_markup, build_lagged_frame, centered_covariance, invert_covariance, residual,
    EstimateOptions, EstimationResult, EstimationTable, InstrumentPlan, OrthoInstruments,
    WeightingMatrix, WeightingMode, OBJECTIVE_PENALTY,
};
use crate::optim::{from_unconstrained, multistart, to_unconstrained};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Total degree of the first-stage regression of `q_{t-1}` on the instruments.
    pub first_stage_degree: usize,
    /// Order of the Hermite polynomial approximating the law of motion.
    pub g_degree: usize,
    pub z_vars: Vec<String>,
    /// Total degree of the instrument functions `phi(z)`.
    pub phi_degree: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let plan = InstrumentPlan::default();
        Self {
            first_stage_degree: 4,
            g_degree: 4,
            z_vars: plan.z_vars,
            phi_degree: plan.phi_degree,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.first_stage_degree < 1 || self.g_degree < 1 || self.phi_degree < 1 {
            return Err(Error::Config("baseline degrees must be at least 1".into()));
        }
        if self.z_vars.is_empty() {
            return Err(Error::Config(
                "baseline needs at least one instrument".into(),
            ));
        }
        Ok(())
    }
}

/// Least-squares fit of `q_{t-1}` on a Hermite basis of `x_vars`.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub spec: FeatureSpec,
    pub basis: OrthoBasis,
    pub fitted: DVector<f64>,
    pub r_squared: f64,
}

pub fn first_stage(
    table: &EstimationTable,
    x_vars: &[String],
    degree: usize,
) -> Result<FirstStage> {
    let cols = table.columns(x_vars)?;
    let names: Vec<&str> = x_vars.iter().map(String::as_str).collect();
    let spec = FeatureSpec::fit(&names, degree, &cols)?;
    let basis = OrthoBasis::build(&spec.evaluate(&cols)?, None);
    let y = DVector::from_column_slice(&table.q_lag);
    let fitted = basis.fit(&y);
    let mean = y.mean();
    let tss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let rss = (&y - &fitted).norm_squared();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    Ok(FirstStage {
        spec,
        basis,
        fitted,
        r_squared,
    })
}

/// `E[q_{t-1} | x] - f(k_{t-1}, v_{t-1}; theta)` per row.
pub fn recovered_productivity(
    theta: &StructuralParams,
    table: &EstimationTable,
    fitted: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(table.len(), |r, _| {
        fitted[r] - ces::log_output(theta, table.k_lag[r], table.v_lag[r])
    })
}

/// `He_0 .. He_degree` of the sample-standardized argument, one column each.
/// A constant argument is centered but not scaled.
pub fn law_of_motion_basis(omega: &DVector<f64>, degree: usize) -> DMatrix<f64> {
    let n = omega.len();
    let mean = omega.mean();
    let var = omega.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let mut out = DMatrix::zeros(n, degree + 1);
    let mut buf = vec![0.0; degree + 1];
    for i in 0..n {
        hermite_values((omega[i] - mean) / sd, degree, &mut buf);
        for (j, b) in buf.iter().enumerate() {
            out[(i, j)] = *b;
        }
    }
    out
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    svd.solve(y, tol)
        .map_err(|e| Error::Numerical(format!("law-of-motion coefficients: {e}")))
}

/// Everything in the second stage that does not depend on `theta`.
#[derive(Debug, Clone)]
pub struct BaselineProblem<'a> {
    table: &'a EstimationTable,
    /// Selected instrument functions.
    pub phi: DMatrix<f64>,
    /// `phi` in orthogonal coordinates; the objective is evaluated there.
    pub ortho: OrthoInstruments,
    pub first: FirstStage,
    pub g_degree: usize,
}

impl<'a> BaselineProblem<'a> {
    pub fn new(table: &'a EstimationTable, config: &BaselineConfig) -> Result<Self> {
        config.validate()?;
        let cols = table.columns(&config.z_vars)?;
        let names: Vec<&str> = config.z_vars.iter().map(String::as_str).collect();
        let spec = FeatureSpec::fit(&names, config.phi_degree, &cols)?;
        let raw = spec.evaluate(&cols)?;
        let basis = OrthoBasis::build(&raw, None);
        let first = first_stage(table, &config.z_vars, config.first_stage_degree)?;
        let phi = raw.select_columns(basis.selected());
        Ok(Self {
            table,
            ortho: OrthoInstruments::new(basis.q(), &phi),
            phi,
            first,
            g_degree: config.g_degree,
        })
    }

    pub fn n_moments(&self) -> usize {
        self.phi.ncols()
    }

    /// Residual `q - f` and the law-of-motion regressors at `theta`.
    fn parts(&self, theta: &StructuralParams) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let r = residual(theta, self.table)?;
        let omega = recovered_productivity(theta, self.table, &self.first.fitted);
        Ok((r, law_of_motion_basis(&omega, self.g_degree)))
    }

    /// `phi' (q - f - G gamma) / n`.
    pub fn moments(&self, theta: &StructuralParams, gamma: &DVector<f64>) -> Result<DVector<f64>> {
        let (r, g) = self.parts(theta)?;
        Ok(self.phi.tr_mul(&(r - g * gamma)) / self.table.len() as f64)
    }

    /// Minimizing law-of-motion coefficients for `theta` under `w` (given in
    /// the coordinates of `self.ortho`), and the moments they leave in those
    /// coordinates.
    pub fn concentrate(
        &self,
        theta: &StructuralParams,
        w: &WeightingMatrix,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let (r, g) = self.parts(theta)?;
        let k = g.ncols();
        let mut y = DMatrix::zeros(r.len(), k + 1);
        y.set_column(0, &r);
        y.columns_mut(1, k).copy_from(&g);
        let p = self.ortho.moments_matrix(&y);
        let b = p.column(0).into_owned();
        let a = p.columns(1, k).into_owned();
        let gamma = least_squares(&(&w.root * &a), &(&w.root * &b))?;
        let m = b - a * &gamma;
        Ok((gamma, m))
    }

    pub fn objective(&self, theta: &StructuralParams, w: &WeightingMatrix) -> f64 {
        match self.concentrate(theta, w) {
            Ok((_, m)) => {
                let v = w.objective(&m);
                if v.is_finite() {
                    v
                } else {
                    OBJECTIVE_PENALTY
                }
            }
            Err(_) => OBJECTIVE_PENALTY,
        }
    }

    /// Inverse covariance of `phi * (q - f - G gamma)` at `theta0`, with
    /// `gamma` from two-stage least squares, in the coordinates of `self.ortho`.
    pub fn weighting_matrix(&self, theta0: &StructuralParams) -> Result<WeightingMatrix> {
        let (r, g) = self.parts(theta0)?;
        let gamma = least_squares(&self.ortho.moments_matrix(&g), &self.ortho.moments(&r))?;
        self.ortho.covariance_weighting(&(r - g * gamma))
    }

    /// The same weighting for the raw instrument moments of [`Self::moments`].
    pub fn raw_weighting_matrix(&self, theta0: &StructuralParams) -> Result<WeightingMatrix> {
        let (r, g) = self.parts(theta0)?;
        let gamma = least_squares(&self.ortho.moments_matrix(&g), &self.ortho.moments(&r))?;
        let u = r - g * gamma;
        let mut contrib = self.phi.clone();
        for mut col in contrib.column_iter_mut() {
            col.component_mul_assign(&u);
        }
        invert_covariance(&centered_covariance(&contrib))
    }
}

pub fn estimate_baseline(
    panel: &FirmPanel,
    config: &BaselineConfig,
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    let table = build_lagged_frame(panel)?;
    estimate_baseline_table(&table, config, options)
}

pub fn estimate_baseline_table(
    table: &EstimationTable,
    config: &BaselineConfig,
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    options.start.validate()?;
    let problem = BaselineProblem::new(table, config)?;
    let dim = problem.n_moments();
    let run = |w: &WeightingMatrix, x0: &DVector<f64>| {
        multistart(
            |u: &DVector<f64>| problem.objective(&from_unconstrained(u), w),
            x0,
            &options.optimizer,
        )
    };
    let x0 = to_unconstrained(&options.start);

    let (w, fit) = match options.weighting {
        WeightingMode::Identity => {
            let w = problem.ortho.identity_weighting();
            let fit = run(&w, &x0);
            (w, fit)
        }
        WeightingMode::Oracle { theta } => {
            let w = problem.weighting_matrix(&theta)?;
            let fit = run(&w, &x0);
            (w, fit)
        }
        WeightingMode::TwoStep => {
            let first = run(&problem.ortho.identity_weighting(), &x0);
            let w = problem.weighting_matrix(&from_unconstrained(&first.x))?;
            let fit = run(&w, &first.x);
            (w, fit)
        }
    };

    if !fit.converged {
        warn!(
            "baseline GMM did not converge: gradient norm {:.3e} after {} iterations",
            fit.gradient_norm, fit.iterations
        );
    }
    if fit.value >= OBJECTIVE_PENALTY {
        return Err(Error::Numerical(
            "objective undefined at every start".into(),
        ));
    }
    let theta_hat = from_unconstrained(&fit.x);
    Ok(EstimationResult {
        method: "baseline".into(),
        control_degree: None,
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
