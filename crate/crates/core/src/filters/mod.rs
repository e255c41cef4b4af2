//! Filtering algorithms: the possibilistic ensemble Kalman filter and its
//! probabilistic baselines.
//!
//! The p-EnKF keeps a weighted ensemble whose index-0 particle is pinned to
//! the expected value; prediction and update move particles through affine
//! transports only, so the weights assigned at initialisation never change.

mod ensemble;
mod gains;
mod kalman;
mod penkf;
mod ukf;

pub use ensemble::{enkf_predict, sqrt_enkf_update, stenkf_update, ProbEnsemble};
pub use gains::{compute_gains, GainPair};
pub use kalman::{kf_predict, kf_update, KalmanState};
pub use penkf::{
    penkf_init, penkf_predict, penkf_update, penkf_update_linearised, InitScheme,
};
pub use ukf::{sigma_points, ukf_step, UkfConfig};
