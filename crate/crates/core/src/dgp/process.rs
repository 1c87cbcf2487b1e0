//! Gaussian AR(1) shock processes and the linear law of motion for
//! productivity, parameterized from stationary moments.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stationary mean, variance and first-order autocorrelation of a
/// Gaussian AR(1) process. A zero variance gives a degenerate (constant)
/// process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockProcessParams {
    pub mean: f64,
    pub variance: f64,
    pub autocorr: f64,
}

impl ShockProcessParams {
    pub const fn new(mean: f64, variance: f64, autocorr: f64) -> Self {
        Self {
            mean,
            variance,
            autocorr,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name}: mean must be finite"
            )));
        }
        if !(self.variance >= 0.0) || !self.variance.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name}: variance must be nonnegative, got {}",
                self.variance
            )));
        }
        if !(self.autocorr.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "{name}: |autocorr| must be < 1, got {}",
                self.autocorr
            )));
        }
        Ok(())
    }
}

/// `x_t = intercept + slope * x_{t-1} + innovation_sd * e_t`, `e_t ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Coefficients {
    pub intercept: f64,
    pub slope: f64,
    pub innovation_sd: f64,
}

impl Ar1Coefficients {
    #[inline]
    pub fn conditional_mean(&self, prev: f64) -> f64 {
        self.intercept + self.slope * prev
    }

    #[inline]
    pub fn step(&self, prev: f64, shock: f64) -> f64 {
        self.conditional_mean(prev) + self.innovation_sd * shock
    }
}

/// Maps stationary moments to AR(1) coefficients.
pub fn solve_ar1(params: &ShockProcessParams) -> Ar1Coefficients {
    let r = params.autocorr;
    Ar1Coefficients {
        intercept: params.mean * (1.0 - r),
        slope: r,
        innovation_sd: (params.variance * (1.0 - r * r)).sqrt(),
    }
}

/// Stationary targets for productivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTargets {
    pub mean_omega: f64,
    pub var_omega: f64,
    pub autocorr_omega: f64,
    pub corr_omega_delta1: f64,
    pub corr_omega_delta2: f64,
}

impl Default for MomentTargets {
    fn default() -> Self {
        Self {
            mean_omega: 0.0,
            var_omega: 0.25,
            autocorr_omega: 0.7,
            corr_omega_delta1: 0.3,
            corr_omega_delta2: -0.3,
        }
    }
}

/// `omega_t = mu_omega + rho_omega omega_{t-1} + rho_delta1 delta1_{t-1}
///  + rho_delta2 delta2_{t-1} + xi_t`, `xi_t ~ N(0, sigma2_omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawOfMotionParams {
    pub mu_omega: f64,
    pub rho_omega: f64,
    pub rho_delta1: f64,
    pub rho_delta2: f64,
    pub sigma2_omega: f64,
}

impl LawOfMotionParams {
    /// Conditional mean `g(omega_{t-1}, delta_{t-1})`.
    #[inline]
    pub fn g(&self, omega: f64, delta1: f64, delta2: f64) -> f64 {
        self.mu_omega + self.rho_omega * omega + self.rho_delta1 * delta1 + self.rho_delta2 * delta2
    }
}

/// Stationary mean vector and covariance of the joint state `(omega, delta1, delta2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointStationary {
    pub mean: [f64; 3],
    pub cov: Matrix3<f64>,
}

/// Solves the law-of-motion coefficients so that the stationary distribution
/// of `(omega, delta1, delta2)` hits every target. `delta1` and `delta2` are
/// independent AR(1) processes.
///
/// With `c_j = Cov(omega, delta_j)`, `V = Var(omega)`, stationarity gives
/// `c_j (1 - r_j a) = r_j b_j V_j`, `Cov(omega_t, omega_{t-1}) = a V + sum b_j c_j`
/// and `V = a^2 V + sum b_j^2 V_j + 2 a sum b_j c_j + sigma2`, which is solved in
/// closed form for `(a, b_1, b_2, sigma2)`.
pub fn solve_law_of_motion(
    targets: &MomentTargets,
    shock_d1: &ShockProcessParams,
    shock_d2: &ShockProcessParams,
) -> Result<LawOfMotionParams> {
    shock_d1.validate("delta1")?;
    shock_d2.validate("delta2")?;
    let t = targets;
    for (name, c) in [
        ("autocorr_omega", t.autocorr_omega),
        ("corr_omega_delta1", t.corr_omega_delta1),
        ("corr_omega_delta2", t.corr_omega_delta2),
    ] {
        if !(c.abs() < 1.0) {
            return Err(Error::Infeasible(format!(
                "{name} must lie in (-1, 1), got {c}"
            )));
        }
    }
    if !(t.var_omega >= 0.0) || !t.mean_omega.is_finite() {
        return Err(Error::Infeasible(format!(
            "var_omega must be nonnegative, got {}",
            t.var_omega
        )));
    }

    let var = t.var_omega;
    if var == 0.0 {
        // degenerate productivity: constant at its mean
        return Ok(LawOfMotionParams {
            mu_omega: t.mean_omega,
            rho_omega: 0.0,
            rho_delta1: 0.0,
            rho_delta2: 0.0,
            sigma2_omega: 0.0,
        });
    }

    let shocks = [
        (shock_d1, t.corr_omega_delta1, "delta1"),
        (shock_d2, t.corr_omega_delta2, "delta2"),
    ];
    // c_j and the pieces of the autocovariance equation
    let mut cov = [0.0; 2];
    let mut sum_c2_over_v = 0.0;
    let mut sum_c2_over_rv = 0.0;
    for (j, (s, corr, name)) in shocks.iter().enumerate() {
        if *corr == 0.0 {
            continue;
        }
        if s.variance == 0.0 {
            return Err(Error::Infeasible(format!(
                "corr(omega, {name}) = {corr} requires a nondegenerate {name}"
            )));
        }
        if s.autocorr == 0.0 {
            return Err(Error::Infeasible(format!(
                "corr(omega, {name}) = {corr} cannot arise through lagged {name} when {name} is white noise"
            )));
        }
        let c = corr * (var * s.variance).sqrt();
        cov[j] = c;
        sum_c2_over_v += c * c / s.variance;
        sum_c2_over_rv += c * c / (s.autocorr * s.variance);
    }

    let denom = var - sum_c2_over_v;
    if !(denom > 0.0) {
        return Err(Error::Infeasible(
            "squared correlations with delta1 and delta2 sum to one or more".into(),
        ));
    }
    let a = (t.autocorr_omega * var - sum_c2_over_rv) / denom;
    if !(a.abs() < 1.0) {
        return Err(Error::Infeasible(format!(
            "implied persistence rho_omega = {a} is non-stationary"
        )));
    }
    let mut b = [0.0; 2];
    for (j, (s, _, _)) in shocks.iter().enumerate() {
        if cov[j] != 0.0 {
            b[j] = cov[j] * (1.0 - s.autocorr * a) / (s.autocorr * s.variance);
        }
    }
    let sigma2 = var * (1.0 - a * a)
        - b[0] * b[0] * shock_d1.variance
        - b[1] * b[1] * shock_d2.variance
        - 2.0 * a * (b[0] * cov[0] + b[1] * cov[1]);
    if !(sigma2 > 0.0) {
        return Err(Error::Infeasible(format!(
            "implied innovation variance sigma2_omega = {sigma2} is not positive"
        )));
    }
    let law = LawOfMotionParams {
        mu_omega: t.mean_omega * (1.0 - a) - b[0] * shock_d1.mean - b[1] * shock_d2.mean,
        rho_omega: a,
        rho_delta1: b[0],
        rho_delta2: b[1],
        sigma2_omega: sigma2,
    };

    // cross-check against the Lyapunov solution of the joint VAR
    let st = joint_stationary(&law, shock_d1, shock_d2)?;
    let achieved = moments_from_stationary(&st, &law);
    let wanted = [
        t.mean_omega,
        t.var_omega,
        t.autocorr_omega,
        t.corr_omega_delta1,
        t.corr_omega_delta2,
    ];
    for (got, want) in achieved.iter().zip(wanted) {
        if (got - want).abs() > 1e-9 * (1.0 + want.abs()) {
            return Err(Error::Numerical(format!(
                "law-of-motion solution misses a target: {got} vs {want}"
            )));
        }
    }
    Ok(law)
}

/// Stationary distribution of the VAR(1) in `(omega, delta1, delta2)`, from
/// the discrete Lyapunov equation `S = A S A' + Q`.
pub fn joint_stationary(
    law: &LawOfMotionParams,
    shock_d1: &ShockProcessParams,
    shock_d2: &ShockProcessParams,
) -> Result<JointStationary> {
    let d1 = solve_ar1(shock_d1);
    let d2 = solve_ar1(shock_d2);
    let a = Matrix3::new(
        law.rho_omega,
        law.rho_delta1,
        law.rho_delta2,
        0.0,
        d1.slope,
        0.0,
        0.0,
        0.0,
        d2.slope,
    );
    if law.rho_omega.abs() >= 1.0 {
        return Err(Error::Infeasible("law of motion is non-stationary".into()));
    }
    let q = Matrix3::from_diagonal(&nalgebra::Vector3::new(
        law.sigma2_omega,
        d1.innovation_sd.powi(2),
        d2.innovation_sd.powi(2),
    ));

    // vec(S) = (I - A kron A)^{-1} vec(Q)
    let kron = a.kronecker(&a);
    let lhs = DMatrix::<f64>::identity(9, 9) - DMatrix::from_iterator(9, 9, kron.iter().copied());
    let rhs = DVector::from_iterator(9, q.iter().copied());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov system".into()))?;
    let cov = Matrix3::from_iterator(sol.iter().copied());
    let cov = (cov + cov.transpose()) * 0.5;

    let mean_d1 = shock_d1.mean;
    let mean_d2 = shock_d2.mean;
    let mean_omega = (law.mu_omega + law.rho_delta1 * mean_d1 + law.rho_delta2 * mean_d2)
        / (1.0 - law.rho_omega);
    Ok(JointStationary {
        mean: [mean_omega, mean_d1, mean_d2],
        cov,
    })
}

/// The five targeted moments implied by a stationary distribution.
fn moments_from_stationary(st: &JointStationary, law: &LawOfMotionParams) -> [f64; 5] {
    let s = &st.cov;
    let var = s[(0, 0)];
    if var == 0.0 {
        return [st.mean[0], 0.0, 0.0, 0.0, 0.0];
    }
    // Cov(omega_t, omega_{t-1}) = a V + b1 c1 + b2 c2
    let lag_cov = law.rho_omega * var + law.rho_delta1 * s[(0, 1)] + law.rho_delta2 * s[(0, 2)];
    let corr = |j: usize| {
        if s[(j, j)] == 0.0 {
            0.0
        } else {
            s[(0, j)] / (var * s[(j, j)]).sqrt()
        }
    };
    [st.mean[0], var, lag_cov / var, corr(1), corr(2)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_d1() -> ShockProcessParams {
        ShockProcessParams::new(10.0, 25.0, 0.7)
    }
    fn default_d2() -> ShockProcessParams {
        ShockProcessParams::new(-1.3543, 0.25, 0.7)
    }

    #[test]
    fn ar1_examples() {
        let c = solve_ar1(&ShockProcessParams::new(0.0, 0.25, 0.7));
        assert_eq!(c.slope, 0.7);
        assert_eq!(c.intercept, 0.0);
        assert_relative_eq!(
            c.innovation_sd,
            (0.25f64 * 0.51).sqrt(),
            max_relative = 1e-15
        );

        let w = solve_ar1(&ShockProcessParams::new(1.0, 4.0, 0.0));
        assert_eq!(w.innovation_sd, 2.0);

        let m = solve_ar1(&ShockProcessParams::new(10.0, 25.0, 0.7));
        assert_relative_eq!(m.intercept, 3.0, max_relative = 1e-14);
    }

    #[test]
    fn decoupled_law_reduces_to_ar1() {
        let targets = MomentTargets {
            corr_omega_delta1: 0.0,
            corr_omega_delta2: 0.0,
            ..MomentTargets::default()
        };
        let law = solve_law_of_motion(&targets, &default_d1(), &default_d2()).unwrap();
        assert_eq!(law.rho_delta1, 0.0);
        assert_eq!(law.rho_delta2, 0.0);
        assert_relative_eq!(law.rho_omega, 0.7, max_relative = 1e-14);
        assert_relative_eq!(law.sigma2_omega, 0.25 * 0.51, max_relative = 1e-13);
    }

    #[test]
    fn default_targets_solution() {
        let law = solve_law_of_motion(&MomentTargets::default(), &default_d1(), &default_d2()).unwrap();
        // rho_omega = (0.7 - 0.18 / 0.7) / 0.82
        assert_relative_eq!(
            law.rho_omega,
            (0.7 - 0.18 / 0.7) / 0.82,
            max_relative = 1e-13
        );
        assert!(law.rho_delta1 > 0.0 && law.rho_delta2 < 0.0);
        assert!(law.sigma2_omega > 0.0);
        let st = joint_stationary(&law, &default_d1(), &default_d2()).unwrap();
        assert!(st.mean[0].abs() < 1e-12);
        assert_relative_eq!(st.cov[(0, 0)], 0.25, max_relative = 1e-12);
        assert_relative_eq!(st.cov[(1, 1)], 25.0, max_relative = 1e-12);
        assert!(st.cov[(1, 2)].abs() < 1e-12);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        for (c1, c2) in [(0.8, -0.7), (0.99, 0.0), (0.6, 0.6)] {
            let t = MomentTargets {
                corr_omega_delta1: c1,
                corr_omega_delta2: c2,
                ..MomentTargets::default()
            };
            let err = solve_law_of_motion(&t, &default_d1(), &default_d2()).unwrap_err();
            assert!(matches!(err, Error::Infeasible(_)), "{c1},{c2}: {err}");
        }
        let bad = MomentTargets {
            corr_omega_delta1: 1.0,
            ..MomentTargets::default()
        };
        assert!(solve_law_of_motion(&bad, &default_d1(), &default_d2()).is_err());
    }

    #[test]
    fn feasibility_boundary_along_symmetric_correlations() {
        // scan c = corr(omega, delta1) = -corr(omega, delta2) upward and
        // locate the first infeasible value; beyond it every value must fail
        let mut first_bad = None;
        for i in 0..=99 {
            let c = i as f64 / 100.0;
            let t = MomentTargets {
                corr_omega_delta1: c,
                corr_omega_delta2: -c,
                ..MomentTargets::default()
            };
            let ok = solve_law_of_motion(&t, &default_d1(), &default_d2()).is_ok();
            match (ok, first_bad) {
                (false, None) => first_bad = Some(c),
                (true, Some(b)) => panic!("feasible at {c} after infeasible at {b}"),
                _ => {}
            }
        }
        let b = first_bad.expect("near-unit correlations must be infeasible");
        assert!(b > 0.3 && b < 0.72, "boundary at {b}");
    }
}
