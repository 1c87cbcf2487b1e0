use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ces::StructuralParams;
use crate::error::{Error, Result};

use super::frame::EstimationTable;
use super::moments::{moment_contributions, orthogonal_residual, Projections};

/// Condition number above which the covariance is regularized.
const MAX_CONDITION: f64 = 1e12;
const RIDGE_SCALE: f64 = 1e-10;

/// Inverse moment covariance with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingMatrix {
    pub matrix: DMatrix<f64>,
    /// Factor `R` with `matrix = R' R`; the objective is evaluated as
    /// `|R m|^2`, which loses far less precision than `m' W m` when the
    /// covariance is badly conditioned.
    pub root: DMatrix<f64>,
    /// Condition number of the covariance before any ridge.
    pub condition_number: f64,
    /// Ridge added to the diagonal, 0 when none was needed.
    pub ridge: f64,
    /// True when the covariance vanished and the identity was used.
    pub identity_fallback: bool,
}

impl WeightingMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            root: DMatrix::identity(dim, dim),
            condition_number: 1.0,
            ridge: 0.0,
            identity_fallback: false,
        }
    }

    /// Wraps a user-supplied symmetric positive definite matrix.
    pub fn from_matrix(w: &DMatrix<f64>) -> Result<Self> {
        let sym = (w + w.transpose()) * 0.5;
        let c = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("weighting matrix is not positive definite".into()))?;
        let eig = sym.clone().symmetric_eigen().eigenvalues;
        Ok(Self {
            root: c.l().transpose(),
            matrix: sym,
            condition_number: eig.max() / eig.min(),
            ridge: 0.0,
            identity_fallback: false,
        })
    }

    /// Weighting with the given factor `R`, `W = R' R`.
    pub fn from_root(root: DMatrix<f64>) -> Self {
        let sv = root.singular_values();
        let (max, min) = (sv.max(), sv.min());
        Self {
            matrix: root.tr_mul(&root),
            condition_number: if min > 0.0 {
                (max / min).powi(2)
            } else {
                f64::INFINITY
            },
            root,
            ridge: 0.0,
            identity_fallback: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `m' W m`.
    pub fn objective(&self, m: &DVector<f64>) -> f64 {
        (&self.root * m).norm_squared()
    }
}

/// How the GMM weighting matrix is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightingMode {
    /// Covariance evaluated at known parameters.
    Oracle {
        theta: StructuralParams,
    },
    /// Covariance evaluated at an identity-weighted first-step estimate.
    TwoStep,
    Identity,
}

impl WeightingMode {
    pub fn label(&self) -> &'static str {
        match self {
            WeightingMode::Oracle { .. } => "oracle",
            WeightingMode::TwoStep => "two_step",
            WeightingMode::Identity => "identity",
        }
    }
}

/// Centered sample covariance (divisor `n - 1`) of the rows of `g`.
pub fn centered_covariance(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mean = g.row_mean();
    let mut c = g.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c.tr_mul(&c) / (n.saturating_sub(1).max(1)) as f64
}

/// Inverts a moment covariance, adding a ridge when it is near singular and
/// falling back to the identity when it is exactly zero.
pub fn invert_covariance(cov: &DMatrix<f64>) -> Result<WeightingMatrix> {
    let dim = cov.nrows();
    let sym = (cov + cov.transpose()) * 0.5;
    let trace = sym.trace();
    if !trace.is_finite() {
        return Err(Error::Numerical("moment covariance is not finite".into()));
    }
    if trace <= 0.0 {
        warn!("moment covariance is zero; using identity weighting");
        return Ok(WeightingMatrix {
            identity_fallback: true,
            ..WeightingMatrix::identity(dim)
        });
    }
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition_number = if min > 0.0 { max / min } else { f64::INFINITY };

    let mut ridge = 0.0;
    let mut a = sym;
    if condition_number > MAX_CONDITION {
        ridge = RIDGE_SCALE * trace / dim as f64;
        warn!("moment covariance near singular (condition {condition_number:.3e}); adding ridge {ridge:.3e}");
        for i in 0..dim {
            a[(i, i)] += ridge;
        }
    }
    let l = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("moment covariance is not positive definite".into()))?
        .l();
    let root = l
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or_else(|| Error::Numerical("singular covariance factor".into()))?;
    Ok(WeightingMatrix {
        matrix: root.tr_mul(&root),
        root,
        condition_number,
        ridge,
        identity_fallback: false,
    })
}

/// Inverse covariance of the orthogonalized moment contributions at `theta0`.
pub fn weighting_matrix(
    table: &EstimationTable,
    proj: &Projections,
    theta0: &StructuralParams,
) -> Result<WeightingMatrix> {
    let m = orthogonal_residual(theta0, table, proj)?;
    invert_covariance(&centered_covariance(&moment_contributions(proj, &m)))
}

/// A set of instrument columns re-expressed in an orthogonal basis of their
/// span, `instruments = basis * coords`, with basis columns scaled to unit
/// mean square. Covariance-weighted GMM is unchanged by this change of
/// coordinates, but the moment covariance is far better conditioned than for
/// raw polynomial instruments, which keeps rounding noise in the objective
/// small.
#[derive(Debug, Clone)]
pub struct OrthoInstruments {
    /// `basis'`, kept row-major in effect for fast products with data columns.
    basis_t: DMatrix<f64>,
    /// Upper-triangular coordinates of the instruments in the basis.
    pub coords: DMatrix<f64>,
}

impl OrthoInstruments {
    /// `q` must have orthonormal columns spanning `instruments`, in the
    /// same order (as produced by Gram-Schmidt on `instruments`).
    pub fn new(q: &DMatrix<f64>, instruments: &DMatrix<f64>) -> Self {
        let n = q.nrows() as f64;
        let basis_t = q.transpose() * n.sqrt();
        let coords = &basis_t * instruments / n;
        Self { basis_t, coords }
    }

    pub fn dim(&self) -> usize {
        self.basis_t.nrows()
    }

    /// Sample means of `basis * u`.
    pub fn moments(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.basis_t * u / u.len() as f64
    }

    /// Sample means of `basis * y_j` for every column of `y`.
    pub fn moments_matrix(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis_t * y / y.nrows() as f64
    }

    /// Inverse covariance of `basis * u`; equivalent to the inverse covariance
    /// of `instruments * u` after the change of coordinates.
    pub fn covariance_weighting(&self, u: &DVector<f64>) -> Result<WeightingMatrix> {
        let mut g = self.basis_t.transpose();
        for mut col in g.column_iter_mut() {
            col.component_mul_assign(u);
        }
        invert_covariance(&centered_covariance(&g))
    }

    /// Identity weighting of the original instrument moments.
    pub fn identity_weighting(&self) -> WeightingMatrix {
        WeightingMatrix::from_root(self.coords.transpose())
    }
}

/// Quadratic form `m' W m`.
pub fn quadratic_form(m: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    m.dot(&(w * m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn covariance_matches_two_pass() {
        let g = normals(500, 4, 3) * 2.0 + DMatrix::from_element(500, 4, 5.0);
        let c = centered_covariance(&g);
        for a in 0..4 {
            for b in 0..4 {
                let ma = g.column(a).mean();
                let mb = g.column(b).mean();
                let s: f64 = (0..500).map(|i| (g[(i, a)] - ma) * (g[(i, b)] - mb)).sum();
                assert_relative_eq!(c[(a, b)], s / 499.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn isotropic_moments_give_scaled_identity() {
        let sigma = 0.5;
        let g = normals(200_000, 3, 11) * sigma;
        let w = invert_covariance(&centered_covariance(&g)).unwrap();
        let target = 1.0 / (sigma * sigma);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { target } else { 0.0 };
                assert!((w.matrix[(i, j)] - expected).abs() < 0.03 * target);
            }
        }
        assert_eq!(w.ridge, 0.0);
    }

    #[test]
    fn singular_covariance_gets_ridge() {
        let mut g = normals(100, 3, 5);
        let c0 = g.column(0).clone_owned();
        g.set_column(2, &(c0 * 2.0));
        let w = invert_covariance(&centered_covariance(&g)).unwrap();
        assert!(w.ridge > 0.0);
        assert!(w.matrix.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zero_covariance_falls_back_to_identity() {
        let g = DMatrix::from_element(10, 2, 1.5);
        let w = invert_covariance(&centered_covariance(&g)).unwrap();
        assert!(w.identity_fallback);
        assert_eq!(w.matrix, DMatrix::identity(2, 2));
    }

    #[test]
    fn root_reproduces_matrix_and_inverse() {
        let g = normals(400, 4, 8);
        let cov = centered_covariance(&g);
        let w = invert_covariance(&cov).unwrap();
        assert!((&w.matrix * &cov - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
        let m = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.05]);
        assert_relative_eq!(
            w.objective(&m),
            quadratic_form(&m, &w.matrix),
            max_relative = 1e-12
        );
        let user = WeightingMatrix::from_matrix(&w.matrix).unwrap();
        assert_relative_eq!(user.objective(&m), w.objective(&m), max_relative = 1e-12);
    }

    #[test]
    fn orthogonal_coordinates_preserve_the_objective() {
        let n = 300;
        let z = normals(n, 1, 21);
        let inst = DMatrix::from_fn(n, 4, |i, j| z[i].powi(j as i32));
        let u = normals(n, 1, 22).column(0).map(|e| e * 0.5) + z.column(0).map(|x| 0.1 * x);
        let q = crate::features::OrthoBasis::build(&inst, None);
        let oi = OrthoInstruments::new(q.q(), &inst);
        let raw_m = inst.tr_mul(&u) / n as f64;
        let mut g = inst.clone();
        for mut col in g.column_iter_mut() {
            col.component_mul_assign(&u);
        }
        let w_raw = invert_covariance(&centered_covariance(&g)).unwrap();
        let w_q = oi.covariance_weighting(&u).unwrap();
        assert_relative_eq!(
            w_raw.objective(&raw_m),
            w_q.objective(&oi.moments(&u)),
            max_relative = 1e-9
        );
        assert_relative_eq!(
            raw_m.norm_squared(),
            oi.identity_weighting().objective(&oi.moments(&u)),
            max_relative = 1e-10
        );
        assert!(w_q.condition_number < w_raw.condition_number);
    }

    #[test]
    fn quadratic_form_scales() {
        let m = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let w = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let base = quadratic_form(&m, &w);
        assert_relative_eq!(
            quadratic_form(&m, &(&w * 7.5)),
            7.5 * base,
            max_relative = 1e-14
        );
        assert_eq!(
            quadratic_form(&DVector::zeros(3), &DMatrix::identity(3, 3)),
            0.0
        );
    }
}
