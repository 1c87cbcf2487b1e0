//! Finite-difference check that the orthogonalized moments have zero
//! derivative in the direction of nuisance perturbations, contrasted with
//! the moments built on a fixed control function.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ces::StructuralParams;
use crate::error::{Error, Result};

use super::frame::EstimationTable;
use super::moments::{residual, InstrumentPlan, Projections};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityOptions {
    pub n_directions: usize,
    /// Finite-difference steps, largest first.
    pub steps: Vec<f64>,
    /// Bound on `|derivative| / standard error` for every moment.
    pub tol: f64,
    pub seed: u64,
}

impl Default for OrthogonalityOptions {
    fn default() -> Self {
        Self {
            n_directions: 20,
            steps: vec![1e-2, 1e-3, 1e-4],
            tol: 1e-3,
            seed: 1,
        }
    }
}

/// Perturbation of the nuisance functions: `zeta` shifts the control
/// function, column `j` of `eta` shifts the projection of weighting function `j`.
/// Both are functions of the control variables only.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceDirection {
    pub zeta: DVector<f64>,
    pub eta: DMatrix<f64>,
}

impl NuisanceDirection {
    pub fn zero(n: usize, n_moments: usize) -> Self {
        Self {
            zeta: DVector::zeros(n),
            eta: DMatrix::zeros(n, n_moments),
        }
    }
}

fn unit_rms(mut x: DVector<f64>) -> DVector<f64> {
    let rms = x.norm() / (x.len() as f64).sqrt();
    if rms > 0.0 {
        x /= rms;
    }
    x
}

/// Random direction on the span of the control basis, each function
/// scaled to unit root mean square.
pub fn random_direction(proj: &Projections, rng: &mut ChaCha20Rng) -> NuisanceDirection {
    let q = proj.control.basis.q();
    let r = q.ncols();
    let mut draw = |_: usize| {
        let c = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut *rng));
        unit_rms(q * c)
    };
    let zeta = draw(0);
    let cols: Vec<DVector<f64>> = (0..proj.n_moments()).map(&mut draw).collect();
    NuisanceDirection {
        zeta,
        eta: DMatrix::from_columns(&cols),
    }
}

/// Orthogonalized moments with the nuisance functions moved by `lambda * direction`.
pub fn perturbed_orthogonal_moments(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
    dir: &NuisanceDirection,
    lambda: f64,
) -> Result<DVector<f64>> {
    let r = residual(theta, table)?;
    let m = &r - proj.control.fit(&r) - &dir.zeta * lambda;
    let phi = &proj.phi_resid - &dir.eta * lambda;
    Ok(phi.tr_mul(&m) / table.len() as f64)
}

/// Control-function moments with `h` held fixed and shifted by `lambda * zeta`.
pub fn perturbed_control_function_moments(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
    h: &DVector<f64>,
    dir: &NuisanceDirection,
    lambda: f64,
) -> Result<DVector<f64>> {
    let r = residual(theta, table)?;
    let u = r - h - &dir.zeta * lambda;
    Ok(proj.phi.tr_mul(&u) / table.len() as f64)
}

/// Central differences at each step, and the Richardson combination of the
/// two smallest steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    pub by_step: Vec<DVector<f64>>,
    pub richardson: DVector<f64>,
}

pub fn directional_derivative<F>(f: F, steps: &[f64]) -> Result<DerivativeEstimate>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    if steps.is_empty() || steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Config(
            "finite-difference steps must be positive".into(),
        ));
    }
    let by_step = steps
        .iter()
        .map(|&h| Ok((f(h)? - f(-h)?) / (2.0 * h)))
        .collect::<Result<Vec<_>>>()?;
    let richardson = if steps.len() >= 2 {
        let n = steps.len();
        let (h1, h2) = (steps[n - 2], steps[n - 1]);
        let r2 = (h1 / h2).powi(2);
        (&by_step[n - 1] * r2 - &by_step[n - 2]) / (r2 - 1.0)
    } else {
        by_step[0].clone()
    };
    Ok(DerivativeEstimate {
        by_step,
        richardson,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    /// Largest `|derivative| / standard error` over the orthogonalized moments.
    pub orthogonal_ratio: f64,
    /// The same for the fixed-control-function moments.
    pub control_function_ratio: f64,
    pub orthogonal_pass: bool,
    pub control_function_pass: bool,
    /// Whether all step sizes agree with the Richardson value within tolerance.
    pub steps_consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub tol: f64,
    pub steps: Vec<f64>,
    pub n_moments: usize,
    pub directions: Vec<DirectionReport>,
}

impl OrthogonalityReport {
    pub fn orthogonal_pass_rate(&self) -> f64 {
        rate(&self.directions, |d| d.orthogonal_pass)
    }

    pub fn control_function_fail_rate(&self) -> f64 {
        rate(&self.directions, |d| !d.control_function_pass)
    }

    pub fn max_orthogonal_ratio(&self) -> f64 {
        self.directions
            .iter()
            .map(|d| d.orthogonal_ratio)
            .fold(0.0, f64::max)
    }
}

fn rate(d: &[DirectionReport], pred: impl Fn(&DirectionReport) -> bool) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    d.iter().filter(|x| pred(x)).count() as f64 / d.len() as f64
}

/// Per-moment standard error of the mean of the columns of `phi ⊙ m`.
fn standard_errors(phi: &DMatrix<f64>, m: &DVector<f64>) -> DVector<f64> {
    let n = m.len() as f64;
    DVector::from_fn(phi.ncols(), |j, _| {
        let g = phi.column(j).component_mul(m);
        let mean = g.mean();
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    })
}

fn max_ratio(d: &DVector<f64>, se: &DVector<f64>) -> f64 {
    d.iter()
        .zip(se.iter())
        .map(|(x, s)| {
            if *s > 0.0 {
                x.abs() / s
            } else if *x == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn consistent(est: &DerivativeEstimate, se: &DVector<f64>, tol: f64) -> bool {
    est.by_step
        .iter()
        .all(|d| max_ratio(&(d - &est.richardson), se) <= tol.max(1e-8))
}

/// Runs the derivative check for `n_directions` random nuisance directions.
pub fn check_neyman_orthogonality(
    theta: &StructuralParams,
    table: &EstimationTable,
    plan: &InstrumentPlan,
    options: &OrthogonalityOptions,
) -> Result<OrthogonalityReport> {
    let proj = Projections::build(table, plan)?;
    check_with_projections(theta, table, &proj, options)
}

pub fn check_with_projections(
    theta: &StructuralParams,
    table: &EstimationTable,
    proj: &Projections,
    options: &OrthogonalityOptions,
) -> Result<OrthogonalityReport> {
    let r = residual(theta, table)?;
    let h = proj.control.fit(&r);
    let m = &r - &h;
    let se_orth = standard_errors(&proj.phi_resid, &m);
    let se_cf = standard_errors(&proj.phi, &m);
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);

    let mut directions = Vec::with_capacity(options.n_directions);
    for _ in 0..options.n_directions {
        let dir = random_direction(proj, &mut rng);
        let d5 = directional_derivative(
            |l| perturbed_orthogonal_moments(theta, table, proj, &dir, l),
            &options.steps,
        )?;
        let d4 = directional_derivative(
            |l| perturbed_control_function_moments(theta, table, proj, &h, &dir, l),
            &options.steps,
        )?;
        let orthogonal_ratio = max_ratio(&d5.richardson, &se_orth);
        let control_function_ratio = max_ratio(&d4.richardson, &se_cf);
        directions.push(DirectionReport {
            orthogonal_ratio,
            control_function_ratio,
            orthogonal_pass: orthogonal_ratio <= options.tol,
            control_function_pass: control_function_ratio <= options.tol,
            steps_consistent: consistent(&d5, &se_orth, options.tol)
                && consistent(&d4, &se_cf, options.tol),
        });
    }
    Ok(OrthogonalityReport {
        tol: options.tol,
        steps: options.steps.clone(),
        n_moments: proj.n_moments(),
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_panel, DgpConfig};
    use crate::gcf::frame::build_lagged_frame;

    fn setup() -> (EstimationTable, Projections) {
        let panel = simulate_panel(&DgpConfig {
            n_firms: 300,
            n_periods: 6,
            ..DgpConfig::default()
        })
        .unwrap();
        let table = build_lagged_frame(&panel).unwrap();
        let proj = Projections::build(&table, &InstrumentPlan::default()).unwrap();
        (table, proj)
    }

    #[test]
    fn zero_direction_has_zero_derivative() {
        let (table, proj) = setup();
        let theta = StructuralParams::default();
        let dir = NuisanceDirection::zero(table.len(), proj.n_moments());
        let d = directional_derivative(
            |l| perturbed_orthogonal_moments(&theta, &table, &proj, &dir, l),
            &[1e-2, 1e-3],
        )
        .unwrap();
        assert!(d.by_step.iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn constant_shift_matches_closed_form() {
        let (table, proj) = setup();
        let theta = StructuralParams::default();
        let r = residual(&theta, &table).unwrap();
        let h = proj.control.fit(&r);
        let mut dir = NuisanceDirection::zero(table.len(), proj.n_moments());
        dir.zeta.fill(1.0);
        let d = directional_derivative(
            |l| perturbed_control_function_moments(&theta, &table, &proj, &h, &dir, l),
            &[1e-2, 1e-3, 1e-4],
        )
        .unwrap();
        let expected = -proj.phi.row_mean().transpose();
        assert!((d.richardson - &expected).amax() < 1e-8 * (1.0 + expected.amax()));
    }

    #[test]
    fn richardson_is_exact_for_quadratics() {
        let f = |l: f64| Ok(DVector::from_vec(vec![3.0 * l * l - 2.0 * l + 1.0]));
        let d = directional_derivative(f, &[1e-1, 1e-2]).unwrap();
        assert!((d.richardson[0] + 2.0).abs() < 1e-12);
        assert!(directional_derivative(f, &[]).is_err());
    }

    #[test]
    fn contrast_on_small_panel() {
        let (table, proj) = setup();
        let report = check_with_projections(
            &StructuralParams::default(),
            &table,
            &proj,
            &OrthogonalityOptions {
                n_directions: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.orthogonal_pass_rate(), 1.0, "{report:?}");
        assert_eq!(report.control_function_fail_rate(), 1.0, "{report:?}");
    }
}
