//! Structural data-generating process for firm panels.
//!
//! Input prices and the demand shocks follow independent Gaussian AR(1)
//! processes; productivity follows a linear law of motion loading on lagged
//! productivity and lagged demand shocks. Capital is chosen one period ahead
//! under certainty equivalence, the variable input after the period's state
//! is revealed, and recorded output adds a disturbance to planned output.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with the
//! configured 64-bit seed; firm `i` draws from stream `i` of that key, so
//! panels are reproducible and independent of how firms are scheduled.

mod decisions;
mod panel;
mod process;

pub use decisions::{
    operating_profit, planned_profit, solve_capital, solve_planned_inputs, solve_variable_input,
    variable_input_foc, CapitalPolicy, ExpectedState, InputDecision, PriorInfo,
};
pub use panel::{
    metadata_path, FirmPanel, Latents, PanelMetadata, LATENT_COLUMNS, OBSERVED_COLUMNS,
};
pub use process::{
    joint_stationary, solve_ar1, solve_law_of_motion, Ar1Coefficients, JointStationary,
    LawOfMotionParams, MomentTargets, ShockProcessParams,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ces::{DemandState, StructuralParams};
use crate::error::{Error, Result};

/// Everything needed to generate one panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub structural: StructuralParams,
    pub shock_pk: ShockProcessParams,
    pub shock_pv: ShockProcessParams,
    pub shock_d1: ShockProcessParams,
    pub shock_d2: ShockProcessParams,
    pub targets: MomentTargets,
    pub eps_sd: f64,
    pub n_firms: usize,
    pub n_periods: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            structural: StructuralParams::default(),
            shock_pk: ShockProcessParams::new(0.0, 0.25, 0.7),
            shock_pv: ShockProcessParams::new(0.0, 0.25, 0.7),
            shock_d1: ShockProcessParams::new(10.0, 25.0, 0.7),
            shock_d2: ShockProcessParams::new(-1.3543, 0.25, 0.7),
            targets: MomentTargets::default(),
            eps_sd: 0.5,
            n_firms: 5000,
            n_periods: 20,
            burn_in: 20,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        self.structural.validate()?;
        self.shock_pk.validate("pK")?;
        self.shock_pv.validate("pV")?;
        self.shock_d1.validate("delta1")?;
        self.shock_d2.validate("delta2")?;
        if self.n_firms < 1 {
            return Err(Error::InvalidParameter("n_firms must be at least 1".into()));
        }
        if self.n_periods < 2 {
            return Err(Error::InvalidParameter(
                "n_periods must be at least 2".into(),
            ));
        }
        if !(self.eps_sd >= 0.0) || !self.eps_sd.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eps_sd must be nonnegative, got {}",
                self.eps_sd
            )));
        }
        Ok(())
    }

    /// A panel with no output disturbance, constant productivity and constant
    /// demand shocks; only the two input prices move.
    pub fn noiseless(n_firms: usize, n_periods: usize, seed: u64) -> Self {
        let base = Self::default();
        Self {
            shock_d1: ShockProcessParams {
                variance: 0.0,
                ..base.shock_d1
            },
            shock_d2: ShockProcessParams {
                variance: 0.0,
                ..base.shock_d2
            },
            targets: MomentTargets {
                var_omega: 0.0,
                corr_omega_delta1: 0.0,
                corr_omega_delta2: 0.0,
                ..base.targets
            },
            eps_sd: 0.0,
            n_firms,
            n_periods,
            seed,
            ..base
        }
    }

    /// Productivity is a scalar AR(1) and both demand shocks are constant,
    /// with the curvature shifter placed so that the log markup is exactly
    /// 0.25. Input demand is then invertible in productivity.
    pub fn scalar_markov(n_firms: usize, n_periods: usize, seed: u64) -> Self {
        let base = Self::default();
        Self {
            shock_d1: ShockProcessParams {
                variance: 0.0,
                ..base.shock_d1
            },
            shock_d2: ShockProcessParams {
                mean: (0.25f64.exp() - 1.0).ln(),
                variance: 0.0,
                ..base.shock_d2
            },
            targets: MomentTargets {
                corr_omega_delta1: 0.0,
                corr_omega_delta2: 0.0,
                ..base.targets
            },
            n_firms,
            n_periods,
            seed,
            ..base
        }
    }
}

/// Solved coefficients of every stochastic process in the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessCoefficients {
    pub law: LawOfMotionParams,
    pub p_k: Ar1Coefficients,
    pub p_v: Ar1Coefficients,
    pub delta1: Ar1Coefficients,
    pub delta2: Ar1Coefficients,
}

impl ProcessCoefficients {
    pub fn solve(config: &DgpConfig) -> Result<Self> {
        Ok(Self {
            law: solve_law_of_motion(&config.targets, &config.shock_d1, &config.shock_d2)?,
            p_k: solve_ar1(&config.shock_pk),
            p_v: solve_ar1(&config.shock_pv),
            delta1: solve_ar1(&config.shock_d1),
            delta2: solve_ar1(&config.shock_d2),
        })
    }

    pub fn capital_policy(&self) -> CapitalPolicy {
        CapitalPolicy {
            law: self.law,
            delta1: self.delta1,
            delta2: self.delta2,
            p_v: self.p_v,
        }
    }
}

/// Lower Cholesky factor of a positive semidefinite 3x3 matrix; directions
/// with zero variance get a zero column.
fn psd_cholesky(a: &nalgebra::Matrix3<f64>) -> nalgebra::Matrix3<f64> {
    let mut l = nalgebra::Matrix3::<f64>::zeros();
    for j in 0..3 {
        let d = a[(j, j)] - (0..j).map(|m| l[(j, m)].powi(2)).sum::<f64>();
        if d <= 1e-14 * a[(j, j)].abs().max(1e-300) {
            continue;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..3 {
            let s = a[(i, j)] - (0..j).map(|m| l[(i, m)] * l[(j, m)]).sum::<f64>();
            l[(i, j)] = s / d;
        }
    }
    l
}

#[derive(Debug, Clone, Copy)]
struct State {
    omega: f64,
    delta1: f64,
    delta2: f64,
    p_k: f64,
    p_v: f64,
}

#[derive(Default)]
struct FirmRecord {
    q: Vec<f64>,
    p: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p_k: Vec<f64>,
    p_v: Vec<f64>,
    latents: Latents,
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random stream for one firm.
pub fn firm_rng(seed: u64, firm: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(firm as u64);
    rng
}

fn simulate_firm(
    config: &DgpConfig,
    coef: &ProcessCoefficients,
    stationary: &JointStationary,
    chol: &nalgebra::Matrix3<f64>,
    firm: usize,
) -> Result<FirmRecord> {
    let theta = &config.structural;
    let policy = coef.capital_policy();
    let mut rng = firm_rng(config.seed, firm);

    // period -1 state from the exact stationary distribution
    let z = nalgebra::Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
    let joint = chol * z;
    let mut state = State {
        omega: stationary.mean[0] + joint[0],
        delta1: stationary.mean[1] + joint[1],
        delta2: stationary.mean[2] + joint[2],
        p_k: config.shock_pk.mean + config.shock_pk.variance.sqrt() * normal(&mut rng),
        p_v: config.shock_pv.mean + config.shock_pv.variance.sqrt() * normal(&mut rng),
    };

    let t_total = config.burn_in + config.n_periods;
    let mut rec = FirmRecord::default();
    let xi_sd = coef.law.sigma2_omega.sqrt();
    for s in 0..t_total {
        let period = s as i64 - config.burn_in as i64;
        let info = PriorInfo {
            omega: state.omega,
            delta1: state.delta1,
            delta2: state.delta2,
            p_k: state.p_k,
            p_v: state.p_v,
        };
        let k = solve_capital(theta, &policy, &info).map_err(|e| e.at(firm, period))?;

        let xi = xi_sd * normal(&mut rng);
        let e1 = normal(&mut rng);
        let e2 = normal(&mut rng);
        let ek = normal(&mut rng);
        let ev = normal(&mut rng);
        let eps = config.eps_sd * normal(&mut rng);

        state = State {
            omega: coef.law.g(state.omega, state.delta1, state.delta2) + xi,
            delta1: coef.delta1.step(state.delta1, e1),
            delta2: coef.delta2.step(state.delta2, e2),
            p_k: coef.p_k.step(state.p_k, ek),
            p_v: coef.p_v.step(state.p_v, ev),
        };
        let demand = DemandState {
            delta1: state.delta1,
            delta2: state.delta2,
        };
        let d = solve_variable_input(theta, k, state.omega, &demand, state.p_v)
            .map_err(|e| e.at(firm, period))?;

        if s >= config.burn_in {
            rec.q.push(d.q_star + eps);
            rec.p.push(d.p);
            rec.k.push(k);
            rec.v.push(d.v);
            rec.p_k.push(state.p_k);
            rec.p_v.push(state.p_v);
            let l = &mut rec.latents;
            l.q_star.push(d.q_star);
            l.omega.push(state.omega);
            l.delta1.push(state.delta1);
            l.delta2.push(state.delta2);
            l.xi.push(xi);
            l.eps.push(eps);
        }
    }
    Ok(rec)
}

/// Simulates a balanced panel with latents retained. Firms are simulated in
/// parallel on independent random streams.
pub fn simulate_panel(config: &DgpConfig) -> Result<FirmPanel> {
    config.validate()?;
    let coef = ProcessCoefficients::solve(config)?;
    let stationary = joint_stationary(&coef.law, &config.shock_d1, &config.shock_d2)?;
    let chol = psd_cholesky(&stationary.cov);

    let firms: Vec<FirmRecord> = (0..config.n_firms)
        .into_par_iter()
        .map(|i| simulate_firm(config, &coef, &stationary, &chol, i))
        .collect::<Result<_>>()?;

    let n = config.n_firms * config.n_periods;
    let mut panel = FirmPanel {
        n_firms: config.n_firms,
        n_periods: config.n_periods,
        q: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        k: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        p_k: Vec::with_capacity(n),
        p_v: Vec::with_capacity(n),
        latents: Some(Latents::default()),
        metadata: Some(PanelMetadata {
            config: config.clone(),
            processes: coef,
        }),
    };
    let lat = panel.latents.as_mut().expect("just set");
    for f in firms {
        panel.q.extend(f.q);
        panel.p.extend(f.p);
        panel.k.extend(f.k);
        panel.v.extend(f.v);
        panel.p_k.extend(f.p_k);
        panel.p_v.extend(f.p_v);
        lat.q_star.extend(f.latents.q_star);
        lat.omega.extend(f.latents.omega);
        lat.delta1.extend(f.latents.delta1);
        lat.delta2.extend(f.latents.delta2);
        lat.xi.extend(f.latents.xi);
        lat.eps.extend(f.latents.eps);
    }
    Ok(panel)
}
