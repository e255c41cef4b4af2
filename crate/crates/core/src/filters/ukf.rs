//! Unscented Kalman filter baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::kalman::{kf_update, KalmanState};
use crate::linalg;

/// Unscented transform parameters; `λ = α²(n + κ) - n` is derived per state
/// dimension and must satisfy `n + λ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UkfConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub beta: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            kappa: 130.0,
            beta: 2.0,
        }
    }
}

impl UkfConfig {
    pub fn lambda(&self, dim: usize) -> f64 {
        self.alpha * self.alpha * (dim as f64 + self.kappa) - dim as f64
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim as f64 + self.lambda(dim) <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "UKF parameters give n + lambda = {} <= 0",
                dim as f64 + self.lambda(dim)
            )));
        }
        Ok(())
    }
}

/// Columns of `((n + λ) Σ)^½`, the symmetric sigma-point offsets.
pub(crate) fn sigma_offsets(
    cov: &DMatrix<f64>,
    scale: f64,
) -> Result<Vec<DVector<f64>>> {
    let l = linalg::chol_lower(cov)?;
    let root_scale = scale.sqrt();
    Ok((0..cov.ncols())
        .map(|j| DVector::from(l.column(j) * root_scale))
        .collect())
}

/// The `2n + 1` sigma points `[μ, μ + offsets…, μ - offsets…]`.
pub fn sigma_points(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    cfg: &UkfConfig,
) -> Result<Vec<DVector<f64>>> {
    let n = mean.len();
    cfg.validate(n)?;
    let offsets = sigma_offsets(cov, n as f64 + cfg.lambda(n))?;
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for o in &offsets {
        points.push(mean + o);
    }
    for o in &offsets {
        points.push(mean - o);
    }
    Ok(points)
}

/// One full UKF step: unscented prediction through the transition map plus
/// additive noise `U`, followed by a linear Kalman update with `H`, `V`.
pub fn ukf_step<F>(
    state: &KalmanState,
    transition: F,
    u: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
    cfg: &UkfConfig,
) -> Result<KalmanState>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = state.dim();
    cfg.validate(n)?;
    let lambda = cfg.lambda(n);
    let denom = n as f64 + lambda;

    let points = sigma_points(&state.mean, &state.covariance, cfg)?;
    let propagated: Vec<DVector<f64>> = points.iter().map(|p| transition(p)).collect();

    let w_mean_0 = lambda / denom;
    let w_cov_0 = w_mean_0 + 1.0 - cfg.alpha * cfg.alpha + cfg.beta;
    let w_rest = 0.5 / denom;

    let mut pred_mean = w_mean_0 * &propagated[0];
    for p in &propagated[1..] {
        pred_mean += w_rest * p;
    }
    let mut pred_cov = u.clone();
    let d0 = &propagated[0] - &pred_mean;
    pred_cov += w_cov_0 * &d0 * d0.transpose();
    for p in &propagated[1..] {
        let d = p - &pred_mean;
        pred_cov += w_rest * &d * d.transpose();
    }
    linalg::symmetrize(&mut pred_cov);

    kf_update(
        &KalmanState {
            mean: pred_mean,
            covariance: pred_cov,
        },
        y,
        h,
        v,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::kalman::kf_predict;
    use approx::assert_relative_eq;

    #[test]
    fn lambda_matches_parameterisation() {
        let cfg = UkfConfig::default();
        // alpha = 0.25, kappa = 130, n = 8: 0.0625 * 138 - 8 = 0.625.
        assert_relative_eq!(cfg.lambda(8), 0.625, epsilon = 1e-12);
        assert!(cfg.validate(8).is_ok());
    }

    #[test]
    fn sigma_point_count() {
        let cfg = UkfConfig::default();
        let points = sigma_points(
            &DVector::zeros(3),
            &DMatrix::identity(3, 3),
            &cfg,
        )
        .unwrap();
        assert_eq!(points.len(), 7);
        assert_eq!(points[0], DVector::zeros(3));
    }

    #[test]
    fn ukf_equals_kf_on_linear_model() {
        let cfg = UkfConfig::default();
        let n = 4;
        let f = crate::models::linear_transition_matrix(n, 0.1);
        let u = DMatrix::identity(n, n) * 0.01;
        let h = DMatrix::from_fn(2, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let v = DMatrix::identity(2, 2) * 0.1;
        let y = DVector::from_vec(vec![0.4, -0.6]);

        let state = KalmanState::new(
            DVector::from_vec(vec![0.2, -0.1, 0.5, 1.0]),
            DMatrix::identity(n, n) * 2.0,
        )
        .unwrap();

        let ukf = ukf_step(&state, |x| &f * x, &u, &y, &h, &v, &cfg).unwrap();
        let kf = kf_update(&kf_predict(&state, &f, &u), &y, &h, &v).unwrap();

        assert_relative_eq!(ukf.mean, kf.mean, epsilon = 1e-8);
        assert_relative_eq!(ukf.covariance, kf.covariance, epsilon = 1e-8);
    }
}
