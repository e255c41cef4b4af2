//! The linear-Gaussian Kalman filter, the optimal reference on linear models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Mean and covariance of a Gaussian filtering distribution.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl KalmanState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "state dim {} vs covariance {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if !linalg::is_symmetric(&covariance, linalg::SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        Ok(Self {
            mean,
            covariance: linalg::symmetric_part(&covariance),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Prediction through a linear model: `μ ← Fμ`, `Σ ← FΣFᵀ + U`.
pub fn kf_predict(state: &KalmanState, f: &DMatrix<f64>, u: &DMatrix<f64>) -> KalmanState {
    let mean = f * &state.mean;
    let mut covariance = f * &state.covariance * f.transpose() + u;
    linalg::symmetrize(&mut covariance);
    KalmanState { mean, covariance }
}

/// Measurement update with observation `y = Hx + ε`, `ε ~ N(0, V)`.
pub fn kf_update(
    state: &KalmanState,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<KalmanState> {
    let n = state.dim();
    let m = y.len();
    if h.nrows() != m || h.ncols() != n || v.nrows() != m || v.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "kf_update: y len {m}, H {}x{}, V {}x{} (state dim {n})",
            h.nrows(),
            h.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let mut s = h * &state.covariance * h.transpose() + v;
    linalg::symmetrize(&mut s);
    let l = linalg::chol_lower(&s).map_err(|_| Error::SingularMatrix)?;
    // K = Σ Hᵀ S⁻¹ through two triangular solves on the transposed system.
    let k = linalg::solve_with_chol(&l, &(h * &state.covariance))?.transpose();
    let mean = &state.mean + &k * (y - h * &state.mean);
    let mut covariance = (DMatrix::identity(n, n) - &k * h) * &state.covariance;
    linalg::symmetrize(&mut covariance);
    Ok(KalmanState { mean, covariance })
}
