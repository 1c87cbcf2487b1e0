use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ces::{self, StructuralParams};
use crate::error::{Error, Result};
use crate::features::{FeatureSpec, OrthoBasis};

use super::frame::EstimationTable;
use super::weighting::OrthoInstruments;

/// Instrument vector, its split into the special instrument and the
/// control variables, and the Hermite degrees used for each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPlan {
    pub z_vars: Vec<String>,
    pub special_vars: Vec<String>,
    /// Total degree of the weighting functions `phi(z)`.
    pub phi_degree: usize,
    /// Total degree of the control-variable basis used for the nuisance projections.
    pub control_degree: usize,
}

impl Default for InstrumentPlan {
    fn default() -> Self {
        Self {
            z_vars: ["k", "k_lag", "v_lag", "p_lag", "pV", "pV_lag"]
                .map(String::from)
                .to_vec(),
            special_vars: vec!["pV".into()],
            phi_degree: 4,
            control_degree: 4,
        }
    }
}

impl InstrumentPlan {
    pub fn with_control_degree(degree: usize) -> Self {
        Self {
            control_degree: degree,
            ..Self::default()
        }
    }

    /// `z` minus the special instruments, in `z` order.
    pub fn control_vars(&self) -> Vec<String> {
        self.z_vars
            .iter()
            .filter(|v| !self.special_vars.contains(v))
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.special_vars.is_empty() {
            return Err(Error::Config(
                "at least one special instrument is required".into(),
            ));
        }
        for s in &self.special_vars {
            if !self.z_vars.contains(s) {
                return Err(Error::Config(format!(
                    "special instrument `{s}` is not among the instruments"
                )));
            }
        }
        let mut seen = self.z_vars.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.z_vars.len() {
            return Err(Error::Config("instrument list has duplicates".into()));
        }
        Ok(())
    }
}

/// Least-squares projection onto the control-variable Hermite basis.
#[derive(Debug, Clone)]
pub struct ControlProjection {
    pub spec: FeatureSpec,
    pub basis: OrthoBasis,
}

impl ControlProjection {
    pub fn new(table: &EstimationTable, vars: &[String], degree: usize) -> Result<Self> {
        let cols = table.columns(vars)?;
        let names: Vec<&str> = vars.iter().map(String::as_str).collect();
        let spec = FeatureSpec::fit(&names, degree, &cols)?;
        let raw = spec.evaluate(&cols)?;
        let basis = OrthoBasis::build(&raw, None);
        Ok(Self { spec, basis })
    }

    pub fn fit(&self, y: &DVector<f64>) -> DVector<f64> {
        self.basis.fit(y)
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }
}

/// Everything in the orthogonalized moment that does not depend on `theta`:
/// the weighting functions, their projections on the control basis and the
/// full-rank selection of residualized columns.
#[derive(Debug, Clone)]
pub struct Projections {
    pub phi_spec: FeatureSpec,
    /// Selected raw columns `phi(z)`.
    pub phi: DMatrix<f64>,
    /// Selected residualized columns `phi(z) - phi_tilde`.
    pub phi_resid: DMatrix<f64>,
    /// Indices of the selected columns within the full weighting basis.
    pub selected: Vec<usize>,
    /// Multi-index label of every weighting-basis column.
    pub labels: Vec<Vec<u32>>,
    pub control: ControlProjection,
    /// `phi_resid` in orthogonal coordinates, used to evaluate the objective.
    pub ortho: OrthoInstruments,
}

impl Projections {
    pub fn build(table: &EstimationTable, plan: &InstrumentPlan) -> Result<Self> {
        plan.validate()?;
        let z_cols = table.columns(&plan.z_vars)?;
        let names: Vec<&str> = plan.z_vars.iter().map(String::as_str).collect();
        let phi_spec = FeatureSpec::fit(&names, plan.phi_degree, &z_cols)?;
        let phi_full = phi_spec.evaluate(&z_cols)?;
        let control = ControlProjection::new(table, &plan.control_vars(), plan.control_degree)?;
        let mut resid_full = &phi_full - control.basis.fit_matrix(&phi_full);
        // second pass so that the residualized columns are orthogonal to the
        // control span to rounding error
        resid_full -= control.basis.fit_matrix(&resid_full);
        let resid_basis = OrthoBasis::build(&resid_full, None);
        let selected = resid_basis.selected().to_vec();
        if selected.is_empty() {
            return Err(Error::Numerical(
                "no weighting function survives residualization on the controls".into(),
            ));
        }
        let phi_resid = resid_full.select_columns(&selected);
        Ok(Self {
            ortho: OrthoInstruments::new(resid_basis.q(), &phi_resid),
            labels: phi_spec.multi_indices(),
            phi_spec,
            phi: phi_full.select_columns(&selected),
            phi_resid,
            selected,
            control,
        })
    }

    pub fn n_moments(&self) -> usize {
        self.selected.len()
    }

    pub fn n_obs(&self) -> usize {
        self.phi.nrows()
    }
}

/// `q - f(k, v; theta)` per row.
pub fn residual(theta: &StructuralParams, table: &EstimationTable) -> Result<DVector<f64>> {
    theta.validate()?;
    Ok(DVector::from_iterator(
        table.len(),
        table
            .q
            .iter()
            .zip(table.k.iter().zip(&table.v))
            .map(|(&q, (&k, &v))| q - ces::log_output(theta, k, v)),
    ))
}

/// Residual net of its projection on the controls, `m_it(theta)`.
pub fn orthogonal_residual(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
) -> Result<DVector<f64>> {
    let r = residual(theta, table)?;
    let fitted = proj.control.fit(&r);
    Ok(r - fitted)
}

/// Sample mean of `(phi(z) - phi_tilde) * (r - (q_tilde - f_tilde))` over the
/// selected weighting functions. The projection of the residual is redone for
/// every `theta`.
pub fn orthogonalized_moments(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
) -> Result<DVector<f64>> {
    let m = orthogonal_residual(theta, table, proj)?;
    Ok(proj.phi_resid.tr_mul(&m) / table.len() as f64)
}

/// Same value as [`orthogonalized_moments`] without re-projecting the
/// residual: the residualized weighting functions are already orthogonal to
/// the control span, so `phi_resid' (r - P r) = phi_resid' r`.
pub fn orthogonalized_moments_unprojected(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
) -> Result<DVector<f64>> {
    let r = residual(theta, table)?;
    Ok(proj.phi_resid.tr_mul(&r) / table.len() as f64)
}

/// Sample mean of `phi(z) * (r - h)` for a given control-function value `h`
/// per row; the moment before orthogonalization.
pub fn control_function_moments(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
    h: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = residual(theta, table)?;
    if h.len() != r.len() {
        return Err(Error::Dimension {
            what: "control function values".into(),
            expected: r.len(),
            got: h.len(),
        });
    }
    Ok(proj.phi.tr_mul(&(r - h)) / table.len() as f64)
}

/// Per-observation moment contributions `(phi - phi_tilde) * m_it` (rows).
pub fn moment_contributions(proj: &Projections, m: &DVector<f64>) -> DMatrix<f64> {
    let mut g = proj.phi_resid.clone();
    for mut col in g.column_iter_mut() {
        col.component_mul_assign(m);
    }
    g
}
