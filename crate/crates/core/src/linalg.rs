//! Small dense helpers shared by the estimators and diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PanelError, Result};

/// Eigenvalues below this absolute floor are treated as non-positive.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Relative squared-residual threshold used when searching for dependent
/// columns of a Gram matrix.
const GRAM_DEPENDENCE_TOL: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// ascending (eigenvectors permuted to match).
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sorted_eigen(m).0[0]
}

/// Applies `f` to the eigenvalues of a symmetric positive definite matrix.
/// Fails when any eigenvalue is below [`EIGEN_FLOOR`].
fn spectral_map(m: &DMatrix<f64>, which: &'static str, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(m);
    if !values.is_empty() && values[0] < EIGEN_FLOOR {
        return Err(PanelError::NotPositiveDefinite {
            which,
            min_eigenvalue: values[0],
        });
    }
    let mapped = DMatrix::from_diagonal(&values.map(f));
    let mut out = &vectors * mapped * vectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Symmetric square root of a positive definite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>, which: &'static str) -> Result<DMatrix<f64>> {
    spectral_map(m, which, f64::sqrt)
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, which: &'static str) -> Result<DMatrix<f64>> {
    spectral_map(m, which, |v| 1.0 / v.sqrt())
}

/// Inverse through a Cholesky factorization, `None` if not positive definite.
pub fn cholesky_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = m.clone().cholesky()?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Greedy scan for columns of a Gram matrix `G = Z'Z` that are linearly
/// dependent on earlier columns. Runs a Cholesky factorization that skips
/// pivots whose relative residual falls below a fixed tolerance.
pub fn dependent_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let k = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    let mut dependent = Vec::new();
    for j in 0..k {
        let diag = gram[(j, j)];
        let mut resid = diag;
        for &p in &kept {
            resid -= l[(j, p)] * l[(j, p)];
        }
        if diag <= 0.0 || resid <= GRAM_DEPENDENCE_TOL * diag {
            dependent.push(j);
            continue;
        }
        let pivot = resid.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..k {
            let mut s = gram[(i, j)];
            for &p in &kept {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / pivot;
        }
        kept.push(j);
    }
    dependent
}

/// Solves the normal equations `G x = b` for a symmetric positive definite
/// `G`, returning the solution and `G^{-1}`. Rank problems are reported, not
/// papered over with a pseudo-inverse.
pub fn solve_normal(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match gram.clone().cholesky() {
        Some(chol) => {
            let x = chol.solve(rhs);
            let mut inv = chol.inverse();
            symmetrize(&mut inv);
            Ok((x, inv))
        }
        None => {
            let columns = dependent_columns(gram);
            if columns.is_empty() {
                Err(PanelError::SingularNormalMatrix)
            } else {
                Err(PanelError::RankDeficient { columns })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m, "m").unwrap();
        assert!(max_abs_diff(&(&r * &r), &m) < 1e-12);
        let ri = sym_inv_sqrt(&m, "m").unwrap();
        assert!(max_abs_diff(&(&ri * &m * &ri), &DMatrix::identity(3, 3)) < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = sym_sqrt(&m, "psi").unwrap_err();
        assert!(matches!(err, PanelError::NotPositiveDefinite { which: "psi", .. }));
    }

    #[test]
    fn finds_duplicated_column() {
        // columns: a, b, a + b, c
        let z = DMatrix::from_row_slice(
            5,
            4,
            &[
                1.0, 0.0, 1.0, 2.0, //
                2.0, 1.0, 3.0, 0.0, //
                0.0, 1.0, 1.0, 1.0, //
                1.0, 3.0, 4.0, 5.0, //
                4.0, 1.0, 5.0, 1.0,
            ],
        );
        let g = z.transpose() * &z;
        assert_eq!(dependent_columns(&g), vec![2]);
        let err = solve_normal(&g, &DVector::zeros(4)).unwrap_err();
        assert_eq!(err, PanelError::RankDeficient { columns: vec![2] });
    }

    #[test]
    fn eigen_sorted_ascending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (v, _) = sorted_eigen(&m);
        assert_relative_eq!(v[0], 1.0);
        assert_relative_eq!(v[2], 3.0);
    }
}
