//! Firm decisions: the static variable-input choice and the capital policy.

use serde::{Deserialize, Serialize};

use crate::ces::{self, DemandState, StructuralParams};
use crate::error::{Error, Result};

use super::process::{Ar1Coefficients, LawOfMotionParams};

/// Optimal variable input and the implied price and planned output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputDecision {
    pub v: f64,
    pub p: f64,
    pub q_star: f64,
}

/// Log first-order condition for the variable input, `ln(MR_v) - ln(MC_v)`.
///
/// Revenue is `exp(p + q*) = exp(delta1 / eta + q* / mu)` once the price
/// clears demand, so the condition reads
/// `delta1/eta + (f + omega)/mu - ln mu + ln f_v - pV - v = 0`.
pub fn variable_input_foc(
    params: &StructuralParams,
    k: f64,
    omega: f64,
    demand: &DemandState,
    p_v: f64,
    v: f64,
) -> f64 {
    let eta = demand.elasticity();
    let log_mu = ces::log_markup(demand.delta2);
    let mu = ces::markup(demand.delta2);
    demand.delta1 / eta + (ces::log_output(params, k, v) + omega) / mu - log_mu
        + ces::log_output_elasticity_v(params, k, v)
        - p_v
        - v
}

fn foc_slope(params: &StructuralParams, k: f64, demand: &DemandState, v: f64) -> f64 {
    let mu = ces::markup(demand.delta2);
    let e = ces::output_elasticity_v(params, k, v);
    // d ln f_v / dv = rho * (1 - share)
    let share = e / params.nu;
    e / mu + params.rho * (1.0 - share) - 1.0
}

const BRACKET: f64 = 30.0;
const MAX_BRACKET: f64 = 1.0e4;
const FOC_TOL: f64 = 1e-12;

/// Profit-maximizing variable input given capital, productivity, demand and
/// the input price. Bracketed bisection refined by safeguarded Newton.
pub fn solve_variable_input(
    params: &StructuralParams,
    k: f64,
    omega: f64,
    demand: &DemandState,
    p_v: f64,
) -> Result<InputDecision> {
    let foc = |v: f64| variable_input_foc(params, k, omega, demand, p_v, v);

    let (mut lo, mut hi) = (-BRACKET, BRACKET);
    let (mut f_lo, mut f_hi) = (foc(lo), foc(hi));
    while !(f_lo > 0.0 && f_hi < 0.0) {
        if hi >= MAX_BRACKET {
            return Err(Error::NoInteriorOptimum(format!(
                "first-order condition has no sign change on [{lo}, {hi}] (k={k}, omega={omega}, {demand:?}, pV={p_v})"
            )));
        }
        lo *= 2.0;
        hi *= 2.0;
        f_lo = foc(lo);
        f_hi = foc(hi);
    }

    let mut v = 0.5 * (lo + hi);
    let mut f = foc(v);
    for _ in 0..200 {
        if f.abs() <= FOC_TOL {
            break;
        }
        if f > 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let slope = foc_slope(params, k, demand, v);
        let newton = v - f / slope;
        v = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        f = foc(v);
        if hi - lo <= 4.0 * f64::EPSILON * v.abs().max(1.0) {
            break;
        }
    }
    if !(f.abs() <= 1e-10) {
        return Err(Error::Numerical(format!(
            "variable-input FOC did not converge: residual {f} at v={v}"
        )));
    }
    if foc_slope(params, k, demand, v) >= 0.0 {
        return Err(Error::NoInteriorOptimum(format!(
            "stationary point at v={v} is not a maximum"
        )));
    }

    let q_star = ces::log_output(params, k, v) + omega;
    let p = ces::inverse_demand(demand, q_star);
    Ok(InputDecision { v, p, q_star })
}

/// Operating profit `exp(p + q*) - exp(pV + v)` at an arbitrary input choice.
pub fn operating_profit(
    params: &StructuralParams,
    k: f64,
    omega: f64,
    demand: &DemandState,
    p_v: f64,
    v: f64,
) -> f64 {
    let q_star = ces::log_output(params, k, v) + omega;
    let p = ces::inverse_demand(demand, q_star);
    (p + q_star).exp() - (p_v + v).exp()
}

/// Period `t-1` information a firm uses to choose `k_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorInfo {
    pub omega: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub p_k: f64,
    pub p_v: f64,
}

/// Expectation rules behind the certainty-equivalent capital choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapitalPolicy {
    pub law: LawOfMotionParams,
    pub delta1: Ar1Coefficients,
    pub delta2: Ar1Coefficients,
    pub p_v: Ar1Coefficients,
}

/// Certainty-equivalent state a firm plans on for period `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedState {
    pub omega: f64,
    pub demand: DemandState,
    pub p_v: f64,
    /// Unit cost of capital, `exp(p_k)`, paid at the `t-1` price.
    pub p_k: f64,
}

impl CapitalPolicy {
    pub fn expected_state(&self, info: &PriorInfo) -> ExpectedState {
        ExpectedState {
            omega: self.law.g(info.omega, info.delta1, info.delta2),
            demand: DemandState {
                delta1: self.delta1.conditional_mean(info.delta1),
                delta2: self.delta2.conditional_mean(info.delta2),
            },
            p_v: self.p_v.conditional_mean(info.p_v),
            p_k: info.p_k,
        }
    }
}

/// Expected profit net of the capital bill at the certainty-equivalent state.
pub fn planned_profit(params: &StructuralParams, state: &ExpectedState, k: f64, v: f64) -> f64 {
    operating_profit(params, k, state.omega, &state.demand, state.p_v, v) - (state.p_k + k).exp()
}

/// Capital for period `t` chosen at `t-1`: the `k` of the joint `(k, v)`
/// maximizer of planned profit at the certainty-equivalent state.
///
/// Both first-order conditions pin the input ratio
/// `k - v = (ln(alpha / (1 - alpha)) - (pK - pV)) / (1 - rho)`, after which the
/// variable-input condition is linear in `v` because `f(v + D, v) = nu v + f(D, 0)`.
pub fn solve_capital(
    params: &StructuralParams,
    policy: &CapitalPolicy,
    info: &PriorInfo,
) -> Result<f64> {
    let state = policy.expected_state(info);
    solve_planned_inputs(params, &state).map(|(k, _)| k)
}

/// Joint `(k, v)` maximizer of [`planned_profit`].
pub fn solve_planned_inputs(
    params: &StructuralParams,
    state: &ExpectedState,
) -> Result<(f64, f64)> {
    if params.rho >= 1.0 {
        return Err(Error::NoInteriorOptimum(format!(
            "rho = {} gives non-convex isoquants",
            params.rho
        )));
    }
    let mu = ces::markup(state.demand.delta2);
    let scale = 1.0 - params.nu / mu;
    if !(scale > 0.0) {
        return Err(Error::NoInteriorOptimum(format!(
            "returns to scale {} exceed the markup {mu}; profit is unbounded in scale",
            params.nu
        )));
    }
    let ratio =
        ((params.alpha / (1.0 - params.alpha)).ln() - (state.p_k - state.p_v)) / (1.0 - params.rho);
    let eta = state.demand.elasticity();
    let constant = state.demand.delta1 / eta + state.omega / mu;
    let v = (constant + ces::log_output(params, ratio, 0.0) / mu
        - ces::log_markup(state.demand.delta2)
        + ces::log_output_elasticity_v(params, ratio, 0.0)
        - state.p_v)
        / scale;
    let k = v + ratio;
    if !k.is_finite() || !v.is_finite() {
        return Err(Error::NoInteriorOptimum(
            "planned inputs are not finite".into(),
        ));
    }
    Ok((k, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::process::{solve_ar1, solve_law_of_motion, MomentTargets, ShockProcessParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const THETA: StructuralParams = StructuralParams {
        alpha: 0.3,
        rho: -1.0,
        nu: 0.95,
    };

    fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > tol {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        0.5 * (a + b)
    }

    /// Grid over [lo, hi] followed by golden section around the best point.
    fn grid_golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let best = (0..=n)
            .map(|i| lo + h * i as f64)
            .max_by(|x, y| f(*x).partial_cmp(&f(*y)).unwrap())
            .unwrap();
        golden_max(&f, (best - h).max(lo), (best + h).min(hi), 1e-9)
    }

    fn policy() -> CapitalPolicy {
        let d1 = ShockProcessParams::new(10.0, 25.0, 0.7);
        let d2 = ShockProcessParams::new(-1.3543, 0.25, 0.7);
        CapitalPolicy {
            law: solve_law_of_motion(&MomentTargets::default(), &d1, &d2).unwrap(),
            delta1: solve_ar1(&d1),
            delta2: solve_ar1(&d2),
            p_v: solve_ar1(&ShockProcessParams::new(0.0, 0.25, 0.7)),
        }
    }

    #[test]
    fn foc_identity_and_markup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let demand = DemandState {
                delta1: rng.random_range(0.0..20.0),
                delta2: rng.random_range(-2.5..0.0),
            };
            let k = rng.random_range(-2.0..10.0);
            let omega = rng.random_range(-1.5..1.5);
            let p_v = rng.random_range(-1.5..1.5);
            let d = solve_variable_input(&THETA, k, omega, &demand, p_v).unwrap();
            let e = ces::output_elasticity_v(&THETA, k, d.v);
            let lhs = ces::log_markup_plus_noise(d.p, d.q_star, p_v, d.v, e).unwrap();
            assert!((lhs - ces::log_markup(demand.delta2)).abs() < 1e-8);
            assert!(variable_input_foc(&THETA, k, omega, &demand, p_v, d.v).abs() <= 1e-10);
        }
    }

    #[test]
    fn variable_input_falls_with_its_price() {
        let demand = DemandState {
            delta1: 10.0,
            delta2: -1.3543,
        };
        let a = solve_variable_input(&THETA, 4.0, 0.1, &demand, 0.0).unwrap();
        let b = solve_variable_input(&THETA, 4.0, 0.1, &demand, 2f64.ln()).unwrap();
        assert!(b.v < a.v);
    }

    #[test]
    fn variable_input_matches_profit_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let demand = DemandState {
                delta1: rng.random_range(2.0..18.0),
                delta2: rng.random_range(-2.3..-0.4),
            };
            let k = rng.random_range(0.0..8.0);
            let omega = rng.random_range(-1.0..1.0);
            let p_v = rng.random_range(-1.0..1.0);
            let d = solve_variable_input(&THETA, k, omega, &demand, p_v).unwrap();
            let oracle = grid_golden_max(
                |v| operating_profit(&THETA, k, omega, &demand, p_v, v),
                -20.0,
                20.0,
                4000,
            );
            assert!((oracle - d.v).abs() < 1e-6, "oracle {oracle} vs {}", d.v);
        }
    }

    #[test]
    fn positive_rho_still_solves() {
        let p = StructuralParams::new(0.4, 0.5, 0.8).unwrap();
        let demand = DemandState {
            delta1: 8.0,
            delta2: -1.0,
        };
        let d = solve_variable_input(&p, 2.0, 0.0, &demand, 0.0).unwrap();
        assert!(variable_input_foc(&p, 2.0, 0.0, &demand, 0.0, d.v).abs() < 1e-10);
    }

    #[test]
    fn capital_comparative_statics() {
        let pol = policy();
        let base = PriorInfo {
            omega: 0.1,
            delta1: 10.0,
            delta2: -1.3,
            p_k: 0.0,
            p_v: 0.0,
        };
        let k0 = solve_capital(&THETA, &pol, &base).unwrap();
        let dearer = PriorInfo { p_k: 0.3, ..base };
        assert!(solve_capital(&THETA, &pol, &dearer).unwrap() < k0);
        let productive = PriorInfo { omega: 0.4, ..base };
        assert!(solve_capital(&THETA, &pol, &productive).unwrap() > k0);
    }

    #[test]
    fn capital_matches_grid_oracle() {
        let pol = policy();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let info = PriorInfo {
                omega: rng.random_range(-1.0..1.0),
                delta1: rng.random_range(4.0..16.0),
                delta2: rng.random_range(-2.0..-0.6),
                p_k: rng.random_range(-1.0..1.0),
                p_v: rng.random_range(-1.0..1.0),
            };
            let state = pol.expected_state(&info);
            let k = solve_capital(&THETA, &pol, &info).unwrap();
            // profit concentrated over v, maximized over k
            let concentrated = |k: f64| {
                let v = grid_golden_max(|v| planned_profit(&THETA, &state, k, v), -20.0, 25.0, 900);
                planned_profit(&THETA, &state, k, v)
            };
            let oracle = grid_golden_max(concentrated, -20.0, 25.0, 900);
            assert!((oracle - k).abs() < 1e-6, "oracle {oracle} vs {k}");
        }
    }

    #[test]
    fn capital_rejects_unbounded_scale() {
        let pol = policy();
        let p = StructuralParams::new(0.3, -1.0, 1.6).unwrap();
        let info = PriorInfo {
            omega: 0.0,
            delta1: 10.0,
            delta2: -1.3543,
            p_k: 0.0,
            p_v: 0.0,
        };
        assert!(matches!(
            solve_capital(&p, &pol, &info),
            Err(Error::NoInteriorOptimum(_))
        ));
    }
}
