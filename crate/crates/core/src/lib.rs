//! Possibilistic ensemble Kalman filtering.
//!
//! This crate treats the state of a state-space model as a fixed but unknown
//! quantity whose epistemic uncertainty is described by possibility functions
//! rather than probability distributions. It provides:
//!
//! - [`possibility`]: Gaussian possibility functions, weighted ensembles, and
//!   affine transport maps between Gaussians;
//! - [`maxdet`]: the determinant-maximization solver that fits the tightest
//!   Gaussian possibility function enveloping a weighted ensemble, with
//!   optional sparsity (conditional-independence) constraints on the
//!   precision matrix;
//! - [`filters`]: the possibilistic ensemble Kalman filter (p-EnKF) and
//!   probabilistic baselines (KF, stochastic EnKF, square-root EnKF, UKF);
//! - [`models`]: twin-experiment models (a bidiagonal linear system and a
//!   modified Lorenz-96 system) plus samplers for ground-truth generation;
//! - [`metrics`]: RMSE variants, Mahalanobis calibration, log-determinant of
//!   the posterior variance, and aggregation across repeats;
//! - [`experiment`]: a configuration-driven, seeded experiment runner that
//!   emits deterministic CSV results.

pub mod error;
pub mod experiment;
pub mod filters;
pub mod linalg;
pub mod maxdet;
pub mod metrics;
pub mod models;
pub mod possibility;
pub mod rng;

pub use error::{Error, Result};
pub use possibility::{AffineMap, GaussianPossibility, WeightedEnsemble};
