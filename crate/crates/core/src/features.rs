//! Complete multivariate Hermite bases, least-squares projection onto them
//! and greedy full-rank column selection.
//!
//! Basis functions are products of probabilists' Hermite polynomials
//! `He_n` evaluated at standardized variables `(x - mean) / sd`, one per
//! exponent vector with total degree at most `d`. Columns are ordered by
//! total degree, then lexicographically with the first variable's exponent
//! descending, so the constant comes first and single-variable powers of the
//! first variable lead each degree block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `He_0 .. He_max_degree` at `x`, from `He_{n+1} = x He_n - n He_{n-1}`.
pub fn hermite_values(x: f64, max_degree: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if max_degree >= 1 {
        out[1] = x;
    }
    for n in 1..max_degree {
        out[n + 1] = x * out[n] - n as f64 * out[n - 1];
    }
}

pub fn hermite(n: usize, x: f64) -> f64 {
    let mut buf = vec![0.0; n + 1];
    hermite_values(x, n, &mut buf);
    buf[n]
}

/// All exponent vectors over `m` variables with component sum `<= degree`.
pub fn multi_indices(m: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(prefix: &mut Vec<u32>, m: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == m {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(prefix, m, remaining - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if m == 0 {
        out.push(Vec::new());
        return out;
    }
    for total in 0..=degree as u32 {
        fill(&mut Vec::with_capacity(m), m, total, &mut out);
    }
    out
}

/// Basis definition: variables, total degree and frozen standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub variable_names: Vec<String>,
    pub total_degree: usize,
    /// `(mean, sd)` per variable.
    pub standardization: Vec<(f64, f64)>,
}

impl FeatureSpec {
    /// Standardization taken from the sample itself (sd with `n - 1`).
    pub fn fit(names: &[&str], total_degree: usize, data: &[&[f64]]) -> Result<Self> {
        if names.len() != data.len() {
            return Err(Error::Dimension {
                what: "feature columns".into(),
                expected: names.len(),
                got: data.len(),
            });
        }
        let mut standardization = Vec::with_capacity(names.len());
        for (name, col) in names.iter().zip(data) {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                return Err(Error::ZeroVariance((*name).to_string()));
            }
            standardization.push((mean, sd));
        }
        Ok(Self {
            variable_names: names.iter().map(|s| s.to_string()).collect(),
            total_degree,
            standardization,
        })
    }

    pub fn n_variables(&self) -> usize {
        self.variable_names.len()
    }

    pub fn multi_indices(&self) -> Vec<Vec<u32>> {
        multi_indices(self.n_variables(), self.total_degree)
    }

    /// Evaluates every basis function at every observation.
    pub fn evaluate(&self, data: &[&[f64]]) -> Result<DMatrix<f64>> {
        let m = self.n_variables();
        if data.len() != m {
            return Err(Error::Dimension {
                what: "feature columns".into(),
                expected: m,
                got: data.len(),
            });
        }
        let rows = data.first().map_or(0, |c| c.len());
        for (name, col) in self.variable_names.iter().zip(data) {
            if col.len() != rows {
                return Err(Error::Dimension {
                    what: format!("rows of `{name}`"),
                    expected: rows,
                    got: col.len(),
                });
            }
        }
        for (name, &(_, sd)) in self.variable_names.iter().zip(&self.standardization) {
            if !(sd > 0.0) {
                return Err(Error::ZeroVariance(name.clone()));
            }
        }

        let d = self.total_degree;
        // univariate tables: he[var][deg * rows + row]
        let mut he = vec![vec![0.0; (d + 1) * rows]; m];
        let mut buf = vec![0.0; d + 1];
        for (j, col) in data.iter().enumerate() {
            let (mean, sd) = self.standardization[j];
            for (r, &x) in col.iter().enumerate() {
                hermite_values((x - mean) / sd, d, &mut buf);
                for (deg, &val) in buf.iter().enumerate() {
                    he[j][deg * rows + r] = val;
                }
            }
        }

        let indices = self.multi_indices();
        let mut out = DMatrix::<f64>::zeros(rows, indices.len());
        for (c, idx) in indices.iter().enumerate() {
            let dst = &mut out.as_mut_slice()[c * rows..(c + 1) * rows];
            dst.fill(1.0);
            for (j, &e) in idx.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let src = &he[j][e as usize * rows..(e as usize + 1) * rows];
                for (x, &h) in dst.iter_mut().zip(src) {
                    *x *= h;
                }
            }
        }
        Ok(out)
    }
}

/// Evaluated basis with its full-rank column selection.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<Vec<u32>>,
    pub selected: Vec<usize>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Copy of the selected columns.
    pub fn selected_matrix(&self) -> DMatrix<f64> {
        self.matrix.select_columns(&self.selected)
    }
}

/// Evaluates the Hermite basis and selects a full-rank set of columns.
pub fn hermite_basis(spec: &FeatureSpec, data: &[&[f64]]) -> Result<DesignMatrix> {
    let matrix = spec.evaluate(data)?;
    let selected = greedy_rank_select(&matrix, None);
    Ok(DesignMatrix {
        matrix,
        labels: spec.multi_indices(),
        selected,
    })
}

/// Largest singular value by power iteration on `A'A`.
pub fn largest_singular_value(a: &DMatrix<f64>) -> f64 {
    let (n, p) = a.shape();
    if n == 0 || p == 0 {
        return 0.0;
    }
    let mut x = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..60 {
        let y = a * &x;
        let z = a.tr_mul(&y);
        let norm = z.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        x = z / norm;
        if (next - sigma).abs() <= 1e-6 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

/// Default numerical-rank threshold `max(rows, cols) * eps * sigma_max`.
pub fn default_rank_tolerance(a: &DMatrix<f64>) -> f64 {
    let (n, p) = a.shape();
    n.max(p) as f64 * f64::EPSILON * largest_singular_value(a)
}

/// Orthonormal basis for the span of selected columns, built by classical
/// Gram-Schmidt with one full reorthogonalization pass.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    q: DMatrix<f64>,
    selected: Vec<usize>,
}

impl OrthoBasis {
    /// Scans columns in order and keeps column `j` iff its component
    /// orthogonal to the columns kept so far has norm above `tol`
    /// (default: [`default_rank_tolerance`]).
    pub fn build(a: &DMatrix<f64>, tol: Option<f64>) -> Self {
        let (n, p) = a.shape();
        let tol = tol.unwrap_or_else(|| default_rank_tolerance(a));
        let mut q = DMatrix::<f64>::zeros(n, p.min(n));
        let mut selected = Vec::new();
        let mut coef = DVector::<f64>::zeros(p);
        for j in 0..p {
            let r = selected.len();
            if r == q.ncols() {
                break;
            }
            let mut w = a.column(j).clone_owned();
            if r > 0 {
                let basis = q.columns(0, r);
                for _ in 0..2 {
                    let mut c = coef.rows_mut(0, r);
                    c.gemv_tr(1.0, &basis, &w, 0.0);
                    w.gemv(-1.0, &basis, &c, 1.0);
                }
            }
            let norm = w.norm();
            if norm > tol {
                q.column_mut(r).copy_from(&(w / norm));
                selected.push(j);
            }
        }
        let r = selected.len();
        Self {
            q: q.columns(0, r).clone_owned(),
            selected,
        }
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn rank(&self) -> usize {
        self.selected.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Least-squares fitted values of `y` on the basis.
    pub fn fit(&self, y: &DVector<f64>) -> DVector<f64> {
        let c = self.q.tr_mul(y);
        &self.q * c
    }

    /// `y - fit(y)`.
    pub fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        y - self.fit(y)
    }

    /// Fitted values column by column.
    pub fn fit_matrix(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let c = self.q.tr_mul(y);
        &self.q * c
    }
}

/// Columns that increase numerical rank, scanned in their natural order.
pub fn greedy_rank_select(matrix: &DMatrix<f64>, tol: Option<f64>) -> Vec<usize> {
    OrthoBasis::build(matrix, tol).selected
}

/// Least-squares fitted values of `target` on the selected basis columns.
pub fn project(basis: &DesignMatrix, target: &DVector<f64>) -> Result<DVector<f64>> {
    if basis.rows() != target.len() {
        return Err(Error::Dimension {
            what: "projection target rows".into(),
            expected: basis.rows(),
            got: target.len(),
        });
    }
    let ortho = OrthoBasis::build(&basis.selected_matrix(), None);
    if ortho.rank() != basis.selected.len() {
        return Err(Error::Numerical(format!(
            "selected basis lost rank: {} of {} columns independent",
            ortho.rank(),
            basis.selected.len()
        )));
    }
    Ok(ortho.fit(target))
}

/// Column-by-column fitted values of `targets`.
pub fn project_matrix(basis: &DesignMatrix, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if basis.rows() != targets.nrows() {
        return Err(Error::Dimension {
            what: "projection target rows".into(),
            expected: basis.rows(),
            got: targets.nrows(),
        });
    }
    let ortho = OrthoBasis::build(&basis.selected_matrix(), None);
    Ok(ortho.fit_matrix(targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn binomial(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    fn gaussian_columns(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn basis_cardinality_is_binomial() {
        for m in 1..=8 {
            for d in 0..=6 {
                let idx = multi_indices(m, d);
                assert_eq!(
                    idx.len() as u64,
                    binomial((m + d) as u64, d as u64),
                    "m={m} d={d}"
                );
                assert!(idx.iter().all(|e| e.iter().sum::<u32>() as usize <= d));
                let mut sorted = idx.clone();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted.len(), idx.len());
            }
        }
        assert_eq!(multi_indices(6, 4).len(), 210);
    }

    #[test]
    fn ordering_is_graded_with_constant_first() {
        let idx = multi_indices(2, 2);
        assert_eq!(
            idx,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn hermite_convention() {
        assert_eq!(hermite(2, 0.0), -1.0);
        assert_eq!(hermite(3, 2.0), 2.0);
        assert_eq!(hermite(4, 1.0), -2.0);
        let mut buf = [0.0; 9];
        for i in 0..=400 {
            let x = -5.0 + 0.025 * i as f64;
            hermite_values(x, 8, &mut buf);
            for n in 1..8 {
                let rhs = x * buf[n] - n as f64 * buf[n - 1];
                assert!((buf[n + 1] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn standardized_single_variable_columns() {
        let x = [-1.0, 0.0, 1.0];
        let spec = FeatureSpec::fit(&["x"], 3, &[&x]).unwrap();
        assert_eq!(spec.standardization, vec![(0.0, 1.0)]);
        let m = spec.evaluate(&[&x]).unwrap();
        assert_eq!(m.ncols(), 4);
        // row x = 0: He_0..He_3 = 1, 0, -1, 0
        assert_eq!(
            m.row(1).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, -1.0, 0.0]
        );
    }

    #[test]
    fn degree_zero_is_constant() {
        let cols = gaussian_columns(3, 50, 1);
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let spec = FeatureSpec::fit(&["a", "b", "c"], 0, &refs).unwrap();
        let m = spec.evaluate(&refs).unwrap();
        assert_eq!(m.ncols(), 1);
        assert!(m.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn zero_variance_names_the_variable() {
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 4.0, 4.0];
        match FeatureSpec::fit(&["a", "flat"], 2, &[&a, &b]) {
            Err(Error::ZeroVariance(name)) => assert_eq!(name, "flat"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_keeps_everything() {
        let m = DMatrix::<f64>::identity(6, 4);
        assert_eq!(greedy_rank_select(&m, None), vec![0, 1, 2, 3]);
    }

    #[test]
    fn exact_dependence_is_dropped() {
        let cols = gaussian_columns(3, 40, 2);
        let mut m = DMatrix::<f64>::zeros(40, 4);
        for r in 0..40 {
            m[(r, 0)] = cols[0][r];
            m[(r, 1)] = cols[1][r];
            m[(r, 2)] = cols[0][r] + cols[1][r];
            m[(r, 3)] = cols[2][r];
        }
        assert_eq!(greedy_rank_select(&m, None), vec![0, 1, 3]);
        let zero = DMatrix::<f64>::zeros(10, 3);
        assert!(greedy_rank_select(&zero, None).is_empty());
    }

    #[test]
    fn appended_copies_do_not_change_selection() {
        let cols = gaussian_columns(2, 200, 3);
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let spec = FeatureSpec::fit(&["a", "b"], 3, &refs).unwrap();
        let m = spec.evaluate(&refs).unwrap();
        let base = greedy_rank_select(&m, None);
        let extra: Vec<usize> = (0..m.ncols()).chain([1, 4, 7]).collect();
        let widened = m.select_columns(&extra);
        assert_eq!(greedy_rank_select(&widened, None), base);
    }

    #[test]
    fn projection_matches_svd_least_squares() {
        let cols = gaussian_columns(3, 300, 4);
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let spec = FeatureSpec::fit(&["a", "b", "c"], 3, &refs).unwrap();
        let basis = hermite_basis(&spec, &refs).unwrap();
        assert_eq!(basis.selected.len(), 20);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let y = DVector::from_fn(300, |_, _| StandardNormal.sample(&mut rng));
        let fitted = project(&basis, &y).unwrap();

        let x = basis.selected_matrix();
        let beta = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let oracle = &x * beta;
        assert!((fitted - &oracle).amax() < 1e-8);
    }

    #[test]
    fn projection_edge_cases() {
        let cols = gaussian_columns(2, 120, 5);
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let spec = FeatureSpec::fit(&["a", "b"], 2, &refs).unwrap();
        let basis = hermite_basis(&spec, &refs).unwrap();

        // in the span
        let y =
            basis.matrix.column(4) * 2.0 - basis.matrix.column(1) + basis.matrix.column(0) * 0.5;
        let fit = project(&basis, &y).unwrap();
        assert!((fit - &y).amax() < 1e-10);

        // constant-only basis gives the sample mean
        let c0 = FeatureSpec::fit(&["a"], 0, &refs[..1]).unwrap();
        let b0 = hermite_basis(&c0, &refs[..1]).unwrap();
        let noise = DVector::from_column_slice(&cols[1]);
        let mean = noise.mean();
        let fit = project(&b0, &noise).unwrap();
        assert!(fit.iter().all(|&f| (f - mean).abs() < 1e-12));

        let short = DVector::zeros(3);
        assert!(project(&basis, &short).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projection_is_idempotent_with_orthogonal_residuals(seed in 0u64..10_000, d in 1usize..5) {
            let cols = gaussian_columns(3, 150, seed);
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let spec = FeatureSpec::fit(&["a", "b", "c"], d, &refs).unwrap();
            let basis = hermite_basis(&spec, &refs).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let y = DVector::from_fn(150, |_, _| StandardNormal.sample(&mut rng));
            let once = project(&basis, &y).unwrap();
            let twice = project(&basis, &once).unwrap();
            prop_assert!((&twice - &once).amax() < 1e-10);
            let resid = &y - &once;
            for &c in &basis.selected {
                let col = basis.matrix.column(c);
                prop_assert!(col.dot(&resid).abs() <= 1e-8 * col.norm() * (1.0 + resid.norm()));
            }
        }
    }
}
