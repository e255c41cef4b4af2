//! Dense linear-algebra kernels with fixed conventions.
//!
//! Every matrix square root in this crate is the lower-triangular Cholesky
//! factor `L` with `A = L Lᵀ`, and nominally symmetric products are
//! re-symmetrized explicitly. Keeping both conventions in one place makes
//! long filter runs reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that a matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Replaces `m` with its symmetric part `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Returns the symmetric part of `m`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Checks symmetry up to a relative tolerance scaled by the largest entry.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Lower-triangular Cholesky factor of a positive-definite matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot drops below
/// `1e-14` relative to the largest diagonal entry.
pub fn chol_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    chol_lower_impl(a, PivotPolicy::Strict)
}

/// Lower-triangular Cholesky factor of a positive *semi*-definite matrix.
///
/// Pivots within `±1e-12` (relative) of zero produce a zero column, so the
/// zero matrix factors to the zero matrix. A clearly negative pivot fails
/// with [`Error::NotPositiveSemidefinite`].
pub fn chol_lower_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    chol_lower_impl(a, PivotPolicy::SemiDefinite)
}

#[derive(Clone, Copy)]
enum PivotPolicy {
    Strict,
    SemiDefinite,
}

fn chol_lower_impl(a: &DMatrix<f64>, policy: PivotPolicy) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        match policy {
            PivotPolicy::Strict => {
                if !(d > 1e-14 * scale) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
            }
            PivotPolicy::SemiDefinite => {
                if !d.is_finite() {
                    return Err(Error::NotPositiveSemidefinite);
                }
                if d < -1e-12 * scale {
                    return Err(Error::NotPositiveSemidefinite);
                }
                if d <= 1e-12 * scale {
                    // Singular direction: leave the column at zero.
                    continue;
                }
            }
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Solves `A x = b` for symmetric positive-definite `A` given its lower
/// Cholesky factor, via forward and backward triangular substitution.
pub fn solve_with_chol(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let y = l
        .solve_lower_triangular(b)
        .ok_or(Error::NotPositiveDefinite)?;
    l.transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::NotPositiveDefinite)
}

/// Solves `A x = b` for a symmetric positive-definite `A` and a vector `b`.
pub fn solve_spd_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = l
        .solve_lower_triangular(b)
        .ok_or(Error::NotPositiveDefinite)?;
    l.transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::NotPositiveDefinite)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn inv_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = chol_lower(a)?;
    let mut inv = solve_with_chol(&l, &DMatrix::identity(a.nrows(), a.ncols()))?;
    symmetrize(&mut inv);
    Ok(inv)
}

/// `log |A|` for symmetric positive-definite `A`, computed as twice the sum
/// of the log-diagonal of the Cholesky factor.
pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let l = chol_lower(a)?;
    Ok(2.0 * (0..a.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Numerical rank from singular values, relative to the largest one.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > rel_tol * smax)
        .count()
}

/// 2-norm condition number from singular values; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])
    }

    #[test]
    fn chol_reconstructs() {
        let a = spd3();
        let l = chol_lower(&a).unwrap();
        let back = &l * l.transpose();
        assert_relative_eq!(back, a, epsilon = 1e-12);
        assert!(l.upper_triangle().abs().sum() - l.diagonal().abs().sum() < 1e-15);
    }

    #[test]
    fn chol_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(chol_lower(&a), Err(Error::NotPositiveDefinite)));
        assert!(matches!(
            chol_lower_psd(&a),
            Err(Error::NotPositiveSemidefinite)
        ));
    }

    #[test]
    fn chol_psd_handles_zero_matrix() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let l = chol_lower_psd(&a).unwrap();
        assert_eq!(l, DMatrix::zeros(3, 3));
    }

    #[test]
    fn chol_psd_handles_rank_deficient() {
        // Rank-1 outer product.
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = &v * v.transpose();
        let l = chol_lower_psd(&a).unwrap();
        assert_relative_eq!(&l * l.transpose(), a, epsilon = 1e-12);
    }

    #[test]
    fn inverse_and_logdet_agree_with_direct() {
        let a = spd3();
        let inv = inv_spd(&a).unwrap();
        assert_relative_eq!(&a * &inv, DMatrix::identity(3, 3), epsilon = 1e-12);
        let ld = log_det_spd(&a).unwrap();
        assert_relative_eq!(ld, a.determinant().ln(), epsilon = 1e-9);
    }

    #[test]
    fn rank_detects_deficiency() {
        let mut m = DMatrix::<f64>::zeros(3, 4);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 2.0;
        m[(2, 2)] = 0.0;
        assert_eq!(rank(&m, 1e-12), 2);
    }
}
