//! Standard and adjusted Kalman gains shared by the square-root update and
//! the p-EnKF.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// The gain pair of the square-root update:
///
/// ```text
/// S = HΣHᵀ + V
/// K = ΣHᵀ S⁻¹                                  (standard gain)
/// K̃ = ΣHᵀ (S^½)⁻ᵀ (S^½ + V^½)⁻¹               (adjusted gain)
/// ```
///
/// with lower Cholesky square roots. The adjusted gain contracts deviations
/// so that `(I - K̃H) Σ (I - K̃H)ᵀ = (I - KH) Σ` holds exactly.
#[derive(Debug, Clone)]
pub struct GainPair {
    pub standard_gain: DMatrix<f64>,
    pub adjusted_gain: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
}

/// Computes both gains from a forecast covariance. `V` may be singular
/// (noiseless limit) as long as the innovation covariance stays definite.
pub fn compute_gains(cov: &DMatrix<f64>, h: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<GainPair> {
    let n = cov.nrows();
    let m = h.nrows();
    if cov.ncols() != n || h.ncols() != n || v.nrows() != m || v.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "compute_gains: cov {}x{}, H {}x{}, V {}x{}",
            cov.nrows(),
            cov.ncols(),
            h.nrows(),
            h.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let mut s = h * cov * h.transpose() + v;
    linalg::symmetrize(&mut s);
    let s_half = linalg::chol_lower(&s).map_err(|_| Error::SingularMatrix)?;
    let v_half = linalg::chol_lower_psd(v)?;

    let cross = cov * h.transpose(); // ΣHᵀ, n×m
    let standard_gain = linalg::solve_with_chol(&s_half, &cross.transpose())?.transpose();

    // Z = ΣHᵀ (S^½)⁻ᵀ  solved as  S^½ Zᵀ = (ΣHᵀ)ᵀ.
    let z_t = s_half
        .solve_lower_triangular(&cross.transpose())
        .ok_or(Error::SingularMatrix)?;
    // K̃ (S^½ + V^½) = Z  solved as  (S^½ + V^½)ᵀ K̃ᵀ = Zᵀ.
    let sum = &s_half + &v_half;
    let adjusted_t = sum
        .transpose()
        .solve_upper_triangular(&z_t)
        .ok_or(Error::SingularMatrix)?;

    Ok(GainPair {
        standard_gain,
        adjusted_gain: adjusted_t.transpose(),
        innovation_cov: s,
    })
}

/// The posterior mean `μ + K (y - Hμ)` shared by every Kalman-type update.
pub(crate) fn posterior_mean(
    mean: &DVector<f64>,
    gain: &DMatrix<f64>,
    innovation: &DVector<f64>,
) -> DVector<f64> {
    mean + gain * innovation
}
