//! Shared dense linear-algebra helpers.
//!
//! Most numerical work in this crate runs through nalgebra. The routines here
//! cover the gaps where a generic factorization would either lose a structural
//! guarantee or pick the wrong arithmetic: triangular solves that preserve
//! exact zero patterns, log-determinants of symmetric positive definite
//! matrices, symmetric square roots, and a vectorized Sylvester solve.
//!
//! # Exact zero patterns
//!
//! Several matrices in the feedback structure are strictly lower triangular by
//! definition (feedback may act only on the past), and downstream code relies
//! on the entries on and above the diagonal being exact zeros rather than
//! round-off noise. The unit triangular solves below only ever combine entries
//! that are already below the diagonal, so a strictly lower triangular
//! right-hand side produces a strictly lower triangular result with the upper
//! part bit-for-bit zero. A generic LU solve does not give that guarantee.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("linear system is singular")]
    Singular,
}

/// Returns `(m + m') / 2`, forcing exact symmetry.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Solves `M X = B` by forward substitution, where `M` is unit lower
/// triangular. Only the strictly lower part of `M` is read; the diagonal is
/// taken to be one.
pub fn solve_unit_lower(m: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "unit lower solve needs a square matrix");
    assert_eq!(n, b.nrows(), "dimension mismatch in unit lower solve");
    let cols = b.ncols();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let coef = m[(i, k)];
            if coef != 0.0 {
                for j in 0..cols {
                    let update = coef * x[(k, j)];
                    x[(i, j)] -= update;
                }
            }
        }
    }
    x
}

/// Solves `X M = B` (right division) by back substitution over columns, where
/// `M` is unit lower triangular.
pub fn rdiv_unit_lower(b: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "unit lower right division needs a square matrix");
    assert_eq!(n, b.ncols(), "dimension mismatch in unit lower right division");
    let rows = b.nrows();
    let mut x = b.clone();
    for j in (0..n).rev() {
        for k in (j + 1)..n {
            let coef = m[(k, j)];
            if coef != 0.0 {
                for r in 0..rows {
                    let update = coef * x[(r, k)];
                    x[(r, j)] -= update;
                }
            }
        }
    }
    x
}

/// Solves `L x = b` with `L` lower triangular (general nonzero diagonal).
pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let update = l[(i, k)] * x[k];
            x[i] -= update;
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Solves `L' x = b` with `L` lower triangular, so the system itself is upper
/// triangular.
pub fn solve_lower_transpose_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let update = l[(k, i)] * x[k];
            x[i] -= update;
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
pub fn cholesky_logdet(m: &DMatrix<f64>) -> Result<f64, LinalgError> {
    let chol = nalgebra::Cholesky::new(symmetrize(m)).ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Eigenvalues of the symmetrized input.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetrize(m).symmetric_eigen().eigenvalues
}

/// Symmetric positive semidefinite square root via eigendecomposition.
///
/// Eigenvalues below `-rel_tol * max_eig` are rejected; small negatives inside
/// the tolerance band are clamped to zero before taking the root.
pub fn sym_sqrt_psd(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>, LinalgError> {
    let eig = symmetrize(m).symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let floor = -rel_tol * max_eig.max(1e-300);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < floor {
            return Err(LinalgError::NotPositiveDefinite);
        }
        *v = v.max(0.0).sqrt();
    }
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Solves the Sylvester equation `F X - X A = Q` by vectorizing the unknown
/// and performing one dense LU solve on the Kronecker-structured operator.
pub fn sylvester(
    f: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    let d = f.nrows();
    let k = a.nrows();
    assert_eq!(q.nrows(), d, "Sylvester right-hand side has wrong row count");
    assert_eq!(q.ncols(), k, "Sylvester right-hand side has wrong column count");
    if d == 0 || k == 0 {
        return Ok(DMatrix::zeros(d, k));
    }
    let op = DMatrix::identity(k, k).kronecker(f) - a.transpose().kronecker(&DMatrix::identity(d, d));
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = nalgebra::LU::new(op).solve(&rhs).ok_or(LinalgError::Singular)?;
    Ok(DMatrix::from_column_slice(d, k, sol.as_slice()))
}

/// Largest absolute entry, zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    max_abs(&(a - b))
}

/// Orthonormal basis of the full space whose first column is `v / |v|`,
/// completed by modified Gram-Schmidt over the standard basis.
pub fn orthonormal_completion(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let norm = v.norm();
    assert!(norm > 0.0, "cannot complete a zero vector to a basis");
    basis.push(v / norm);
    for j in 0..n {
        if basis.len() == n {
            break;
        }
        let mut cand = DVector::zeros(n);
        cand[j] = 1.0;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&cand);
                cand -= q * proj;
            }
        }
        let cn = cand.norm();
        if cn > 1e-8 {
            basis.push(cand / cn);
        }
    }
    assert_eq!(basis.len(), n, "basis completion failed");
    DMatrix::from_columns(&basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lower_with_unit_diag(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..i {
                m[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        m
    }

    #[test]
    fn unit_lower_solve_round_trip() {
        let m = lower_with_unit_diag(7, 1);
        let b = DMatrix::from_fn(7, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.9);
        let x = solve_unit_lower(&m, &(&m * &b));
        assert!(max_abs_diff(&x, &b) < 1e-12);
    }

    #[test]
    fn rdiv_round_trip() {
        let m = lower_with_unit_diag(6, 2);
        let b = DMatrix::from_fn(4, 6, |i, j| ((i + 2 * j) as f64).sin());
        let x = rdiv_unit_lower(&(&b * &m), &m);
        assert!(max_abs_diff(&x, &b) < 1e-12);
    }

    #[test]
    fn solves_preserve_strict_lower_zeros_exactly() {
        let n = 8;
        let m = lower_with_unit_diag(n, 3);
        let mut b = lower_with_unit_diag(n, 4);
        b.fill_diagonal(0.0);
        let x = solve_unit_lower(&m, &b);
        let y = rdiv_unit_lower(&b, &m);
        for i in 0..n {
            for j in i..n {
                assert_eq!(x[(i, j)], 0.0);
                assert_eq!(y[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn triangular_vector_solves() {
        let mut l = lower_with_unit_diag(5, 5);
        for i in 0..5 {
            l[(i, i)] = 1.0 + 0.3 * i as f64;
        }
        let b = DVector::from_fn(5, |i, _| 1.0 - 0.2 * i as f64);
        let x = solve_lower_vec(&l, &(&l * &b));
        assert!((&x - &b).norm() < 1e-12);
        let xt = solve_lower_transpose_vec(&l, &(l.transpose() * &b));
        assert!((&xt - &b).norm() < 1e-12);
    }

    #[test]
    fn logdet_matches_known_diagonal() {
        // det diag(2, 3, 4) = 24.
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0]));
        assert_abs_diff_eq!(cholesky_logdet(&m).unwrap(), 24.0_f64.ln(), epsilon = 1e-12);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(cholesky_logdet(&bad).is_err());
    }

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.0, 0.4, 1.5, 0.2, 0.0, 0.2, 1.1]);
        let g = &a * a.transpose();
        let r = sym_sqrt_psd(&g, 1e-10).unwrap();
        assert!(max_abs_diff(&(&r * &r), &g) < 1e-10);
        assert!(max_abs_diff(&r, &r.transpose()) < 1e-14);
    }

    #[test]
    fn sylvester_scalar_case() {
        // 0.5 x - 2 x = -1 has solution x = 2/3.
        let f = DMatrix::from_element(1, 1, 0.5);
        let a = DMatrix::from_element(1, 1, 2.0);
        let q = DMatrix::from_element(1, 1, -1.0);
        let x = sylvester(&f, &a, &q).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn sylvester_residual_random() {
        let f = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.0, -0.3]);
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.0, 1.5, 0.2, 0.0, 0.0, -1.2]);
        let q = DMatrix::from_fn(2, 3, |i, j| (i as f64 - j as f64) * 0.37);
        let x = sylvester(&f, &a, &q).unwrap();
        assert!(max_abs_diff(&(&f * &x - &x * &a), &q) < 1e-10);
    }

    #[test]
    fn sylvester_detects_shared_spectrum() {
        let f = DMatrix::from_element(1, 1, 0.5);
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        assert!(sylvester(&f, &a, &q).is_err());
    }

    #[test]
    fn completion_is_orthonormal() {
        let v = DVector::from_vec(vec![0.3, -1.2, 0.5, 0.05]);
        let q = orthonormal_completion(&v);
        assert!(max_abs_diff(&(q.transpose() * &q), &DMatrix::identity(4, 4)) < 1e-12);
        assert!((q.column(0) - &v / v.norm()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn prop_unit_lower_solve_inverts(seed in 0u64..200) {
            let m = lower_with_unit_diag(6, seed);
            let b = lower_with_unit_diag(6, seed.wrapping_add(1000));
            let x = solve_unit_lower(&m, &b);
            prop_assert!(max_abs_diff(&(&m * &x), &b) < 1e-10);
        }
    }
}
