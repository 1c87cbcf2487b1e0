//! BFGS with five-point finite-difference gradients, a Newton polish step and
//! deterministic multi-start, plus the unconstrained reparameterization of
//! the CES parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ces::StructuralParams;

/// `(logit alpha, ln(-rho), ln nu)`; restricts estimation to `rho < 0`.
pub fn to_unconstrained(theta: &StructuralParams) -> DVector<f64> {
    DVector::from_vec(vec![
        (theta.alpha / (1.0 - theta.alpha)).ln(),
        (-theta.rho).ln(),
        theta.nu.ln(),
    ])
}

pub fn from_unconstrained(u: &DVector<f64>) -> StructuralParams {
    let alpha = 1.0 / (1.0 + (-u[0]).exp());
    StructuralParams {
        alpha,
        rho: -u[1].exp(),
        nu: u[2].exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Converged when the gradient norm falls to this level.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    /// Number of starting points, the first being the supplied start.
    pub n_starts: usize,
    /// Jitter applied to the start in unconstrained coordinates.
    pub jitter: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-8,
            max_iterations: 500,
            n_starts: 5,
            jitter: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&DVector<f64>) -> f64> Counted<F> {
    fn call(&mut self, x: &DVector<f64>) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn step(x: &DVector<f64>, i: usize) -> f64 {
        1e-4 * x[i].abs().max(1.0)
    }

    /// Five-point central differences.
    fn gradient(&mut self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let h = Self::step(x, i);
            let mut at = |t: f64| {
                xp[i] = x[i] + t;
                self.call(&xp)
            };
            let (f1, f_1, f2, f_2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            xp[i] = x[i];
            g[i] = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h);
        }
        g
    }

    fn hessian(&mut self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        for i in 0..n {
            let s = 1e-3 * x[i].abs().max(1.0);
            xp[i] = x[i] + s;
            let gp = self.gradient(&xp);
            xp[i] = x[i] - s;
            let gm = self.gradient(&xp);
            xp[i] = x[i];
            h.column_mut(i).copy_from(&((gp - gm) / (2.0 * s)));
        }
        (&h + h.transpose()) * 0.5
    }
}

const MAX_STEP: f64 = 2.0;
/// Stop when the objective improved by less than `STALL_RTOL` (relative)
/// over the last `STALL_WINDOW` iterations: progress is then below the
/// rounding noise of the objective.
const STALL_WINDOW: usize = 10;
const STALL_RTOL: f64 = 1e-12;

/// Minimizes `f` from `x0`.
pub fn bfgs<F>(f: F, x0: &DVector<f64>, opts: &OptimizerOptions) -> OptimResult
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.clone();
    let mut fx = obj.call(&x);
    let mut g = obj.gradient(&x);
    let mut inv_h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut polished = false;
    let mut history = vec![fx];

    while iterations < opts.max_iterations {
        if !fx.is_finite() || g.norm() <= opts.gradient_tol {
            break;
        }
        iterations += 1;

        let mut dir = -(&inv_h * &g);
        if dir.dot(&g) >= 0.0 {
            inv_h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let dn = dir.norm();
        if dn > MAX_STEP {
            dir *= MAX_STEP / dn;
        }

        // backtracking Armijo search
        let slope = dir.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * t;
            let fnew = obj.call(&xn);
            if fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }

        let Some((xn, fnew)) = accepted else {
            // line search exhausted: try a Newton step with a numerical Hessian
            if polished {
                break;
            }
            polished = true;
            let hess = obj.hessian(&x);
            if let Some(ch) = hess.clone().cholesky() {
                let step = ch.solve(&(-&g));
                let xn = &x + &step;
                let fnew = obj.call(&xn);
                if fnew <= fx {
                    x = xn;
                    fx = fnew;
                    g = obj.gradient(&x);
                    inv_h = hess
                        .try_inverse()
                        .unwrap_or_else(|| DMatrix::identity(n, n));
                    continue;
                }
            }
            break;
        };

        let gn = obj.gradient(&xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if iterations == 1 {
                // scale the initial inverse Hessian
                inv_h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            inv_h = &a * &inv_h * &b + &s * s.transpose() * rho;
        }
        x = xn;
        fx = fnew;
        g = gn;
        polished = false;
        history.push(fx);
        if history.len() > STALL_WINDOW {
            let before = history[history.len() - 1 - STALL_WINDOW];
            if before - fx <= STALL_RTOL * fx.abs() {
                break;
            }
        }
    }

    let gradient_norm = g.norm();
    OptimResult {
        converged: fx.is_finite() && gradient_norm <= opts.gradient_tol,
        x,
        value: fx,
        gradient_norm,
        iterations,
        evaluations: obj.evals,
    }
}

/// Deterministic jittered starting points around `x0`; the first is `x0`.
pub fn start_points(x0: &DVector<f64>, n_starts: usize, jitter: f64) -> Vec<DVector<f64>> {
    let n = x0.len();
    let mut out = vec![x0.clone()];
    let mut k = 1usize;
    while out.len() < n_starts {
        // sign pattern from the binary digits of k; widen after each full cycle
        let cycle = (k - 1) / ((1usize << n.min(16)) - 1).max(1);
        let scale = jitter * (1.0 + cycle as f64);
        let x = DVector::from_fn(n, |i, _| {
            let sign = if (k >> i) & 1 == 1 { 1.0 } else { -1.0 };
            x0[i] + sign * scale
        });
        out.push(x);
        k += 1;
    }
    out
}

/// Runs [`bfgs`] from every start and keeps the lowest objective; ties
/// prefer converged runs, then earlier starts.
pub fn multistart<F>(mut f: F, x0: &DVector<f64>, opts: &OptimizerOptions) -> OptimResult
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut best: Option<OptimResult> = None;
    let mut total_evals = 0;
    for start in start_points(x0, opts.n_starts.max(1), opts.jitter) {
        let r = bfgs(&mut f, &start, opts);
        total_evals += r.evaluations;
        let better = match &best {
            None => true,
            Some(b) => r.value < b.value || (r.value == b.value && r.converged && !b.converged),
        };
        if better {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    best.evaluations = total_evals;
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn transform_round_trip() {
        let theta = StructuralParams::new(0.3, -1.0, 0.95).unwrap();
        let back = from_unconstrained(&to_unconstrained(&theta));
        assert_relative_eq!(back.alpha, 0.3, max_relative = 1e-14);
        assert_relative_eq!(back.rho, -1.0, max_relative = 1e-14);
        assert_relative_eq!(back.nu, 0.95, max_relative = 1e-14);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = bfgs(
            f,
            &DVector::from_vec(vec![-1.2, 1.0]),
            &OptimizerOptions::default(),
        );
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r
        );
    }

    #[test]
    fn quadratic_converges_tightly() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let c = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let f = |x: &DVector<f64>| {
            let d = x - &c;
            1e-3 * d.dot(&(&a * &d))
        };
        let r = multistart(f, &DVector::zeros(3), &OptimizerOptions::default());
        assert!(r.converged);
        assert!((r.x - c).amax() < 1e-6);
    }

    #[test]
    fn starts_are_distinct_and_deterministic() {
        let x0 = DVector::from_vec(vec![0.0, 1.0, -1.0]);
        let s = start_points(&x0, 5, 0.5);
        assert_eq!(s.len(), 5);
        assert_eq!(s[0], x0);
        for i in 0..5 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(s, start_points(&x0, 5, 0.5));
    }
}
