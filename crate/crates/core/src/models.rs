//! Twin-experiment models and ground-truth generation.
//!
//! Both models share the observation structure `H = [I_m 0]` (the first `m`
//! state components are observed), isotropic noise covariances, and a
//! `N(0, 10 I)` initial law; they differ only in the transition map.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

fn default_lambda() -> f64 {
    0.1
}
fn default_u_scale() -> f64 {
    0.01
}
fn default_v_scale() -> f64 {
    0.1
}
fn default_init_var_scale() -> f64 {
    10.0
}
fn default_forcing() -> f64 {
    8.0
}
fn default_boundary() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.01
}

/// Upper-bidiagonal linear model: identity plus a coupling on the
/// superdiagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelConfig {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_lambda")]
    pub lambda_coupling: f64,
    #[serde(default = "default_u_scale")]
    pub u_scale: f64,
    #[serde(default = "default_v_scale")]
    pub v_scale: f64,
    #[serde(default)]
    pub init_mean: Option<Vec<f64>>,
    #[serde(default = "default_init_var_scale")]
    pub init_var_scale: f64,
}

/// Modified Lorenz-96 model with constant boundary substitutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lr96Config {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_forcing")]
    pub forcing: f64,
    #[serde(default = "default_boundary")]
    pub boundary_const: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_u_scale")]
    pub u_scale: f64,
    #[serde(default = "default_v_scale")]
    pub v_scale: f64,
    #[serde(default)]
    pub init_mean: Option<Vec<f64>>,
    #[serde(default = "default_init_var_scale")]
    pub init_var_scale: f64,
}

/// A twin-experiment model: transition map, noise scales, and observation
/// operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModelConfig),
    Lr96(Lr96Config),
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        let (n, m, u, v, init_var, init_mean) = match self {
            Model::Linear(c) => (
                c.n,
                c.m,
                c.u_scale,
                c.v_scale,
                c.init_var_scale,
                c.init_mean.as_ref(),
            ),
            Model::Lr96(c) => {
                if c.n < 4 {
                    return Err(Error::InvalidConfig(
                        "the Lorenz-96 stencil needs n >= 4".into(),
                    ));
                }
                if c.dt <= 0.0 {
                    return Err(Error::InvalidConfig("dt must be positive".into()));
                }
                (
                    c.n,
                    c.m,
                    c.u_scale,
                    c.v_scale,
                    c.init_var_scale,
                    c.init_mean.as_ref(),
                )
            }
        };
        if n == 0 || m == 0 || m > n {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= m <= n, got n = {n}, m = {m}"
            )));
        }
        if u < 0.0 || v <= 0.0 || init_var < 0.0 {
            return Err(Error::InvalidConfig(
                "noise scales must be positive (u_scale, init_var_scale may be zero)".into(),
            ));
        }
        if let Some(mean) = init_mean {
            if mean.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "init_mean has length {}, expected {n}",
                    mean.len()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Linear(c) => c.n,
            Model::Lr96(c) => c.n,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Model::Linear(c) => c.m,
            Model::Lr96(c) => c.m,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Model::Linear(_))
    }

    /// The transition matrix, available only for the linear model.
    pub fn transition_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            Model::Linear(c) => Some(linear_transition_matrix(c.n, c.lambda_coupling)),
            Model::Lr96(_) => None,
        }
    }

    pub fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Model::Linear(c) => {
                let mut out = x.clone();
                for i in 0..c.n - 1 {
                    out[i] += c.lambda_coupling * x[i + 1];
                }
                out
            }
            Model::Lr96(c) => lr96_step(x, c),
        }
    }

    pub fn observation_matrix(&self) -> DMatrix<f64> {
        observation_matrix(self.dim(), self.obs_dim())
    }

    pub fn transition_cov(&self) -> DMatrix<f64> {
        let (n, u) = match self {
            Model::Linear(c) => (c.n, c.u_scale),
            Model::Lr96(c) => (c.n, c.u_scale),
        };
        DMatrix::identity(n, n) * u
    }

    pub fn observation_cov(&self) -> DMatrix<f64> {
        let (m, v) = match self {
            Model::Linear(c) => (c.m, c.v_scale),
            Model::Lr96(c) => (c.m, c.v_scale),
        };
        DMatrix::identity(m, m) * v
    }

    pub fn init_mean(&self) -> DVector<f64> {
        let (n, mean) = match self {
            Model::Linear(c) => (c.n, c.init_mean.as_ref()),
            Model::Lr96(c) => (c.n, c.init_mean.as_ref()),
        };
        mean.map(|m| DVector::from_vec(m.clone()))
            .unwrap_or_else(|| DVector::zeros(n))
    }

    pub fn init_cov(&self) -> DMatrix<f64> {
        let (n, s) = match self {
            Model::Linear(c) => (c.n, c.init_var_scale),
            Model::Lr96(c) => (c.n, c.init_var_scale),
        };
        DMatrix::identity(n, n) * s
    }
}

/// Identity plus `lambda` on the superdiagonal; unit determinant for any
/// size and coupling.
pub fn linear_transition_matrix(n: usize, lambda: f64) -> DMatrix<f64> {
    let mut f = DMatrix::identity(n, n);
    for i in 0..n.saturating_sub(1) {
        f[(i, i + 1)] = lambda;
    }
    f
}

/// `m x n` selector of the first `m` state components.
pub fn observation_matrix(n: usize, m: usize) -> DMatrix<f64> {
    debug_assert!(m <= n);
    DMatrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// One Euler step of the modified Lorenz-96 dynamics. The wrapped neighbours
/// of the classical cyclic stencil are replaced by the constant `c` at the
/// boundaries:
///
/// ```text
/// x₁ += ((x'₂ - c)·c          - x'₁ + F) Δt
/// x₂ += ((x'₃ - c)·x'₁        - x'₂ + F) Δt
/// xᵢ += ((x'ᵢ₊₁ - x'ᵢ₋₂)·x'ᵢ₋₁ - x'ᵢ + F) Δt    (3 <= i <= n-1)
/// xₙ += ((c - x'ₙ₋₂)·x'ₙ₋₁     - x'ₙ + F) Δt
/// ```
pub fn lr96_step(x: &DVector<f64>, cfg: &Lr96Config) -> DVector<f64> {
    let n = x.len();
    assert!(n >= 4, "the Lorenz-96 stencil needs n >= 4");
    let (f, c, dt) = (cfg.forcing, cfg.boundary_const, cfg.dt);
    let mut out = x.clone();
    out[0] += ((x[1] - c) * c - x[0] + f) * dt;
    out[1] += ((x[2] - c) * x[0] - x[1] + f) * dt;
    for i in 2..n - 1 {
        out[i] += ((x[i + 1] - x[i - 2]) * x[i - 1] - x[i] + f) * dt;
    }
    out[n - 1] += ((c - x[n - 3]) * x[n - 2] - x[n - 1] + f) * dt;
    out
}

/// A simulated ground truth: states `x₀..x_T` and observations `y₁..y_T`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

/// Simulates `steps` transitions of the model under its own noise
/// assumptions; fully determined by the RNG stream.
pub fn simulate_trajectory(model: &Model, steps: usize, rng: &mut impl Rng) -> Trajectory {
    let h = model.observation_matrix();
    let (u_scale, v_scale, init_var) = match model {
        Model::Linear(c) => (c.u_scale, c.v_scale, c.init_var_scale),
        Model::Lr96(c) => (c.u_scale, c.v_scale, c.init_var_scale),
    };

    let mut states = Vec::with_capacity(steps + 1);
    let mut observations = Vec::with_capacity(steps);
    let mut x = rng::sample_mvn_iso(&model.init_mean(), init_var, rng);
    states.push(x.clone());
    for _ in 0..steps {
        x = model.transition(&x);
        if u_scale > 0.0 {
            x += u_scale.sqrt() * rng::standard_normal_vector(x.len(), rng);
        }
        let mut y = &h * &x;
        if v_scale > 0.0 {
            y += v_scale.sqrt() * rng::standard_normal_vector(y.len(), rng);
        }
        states.push(x.clone());
        observations.push(y);
    }
    Trajectory {
        states,
        observations,
    }
}

/// Draws from the inverse-Wishart distribution `IW(dof, scale)` via the
/// Bartlett decomposition of the Wishart with inverted scale, then matrix
/// inversion. The mean is `scale / (dof - n - 1)` when `dof > n + 1`.
pub fn sample_inverse_wishart(
    n: usize,
    dof: f64,
    scale: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if scale.nrows() != n || scale.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "scale is {}x{}, expected {n}x{n}",
            scale.nrows(),
            scale.ncols()
        )));
    }
    if dof <= (n - 1) as f64 {
        return Err(Error::InvalidConfig(format!(
            "inverse-Wishart needs dof > n - 1 (dof = {dof}, n = {n})"
        )));
    }
    let scale_inv = linalg::inv_spd(scale)?;
    let l = linalg::chol_lower(&scale_inv)?;

    // Bartlett factor: lower triangular with chi-distributed diagonal.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let chi2 = ChiSquared::new(dof - i as f64).map_err(|_| {
            Error::InvalidConfig("inverse-Wishart degrees of freedom too small".into())
        })?;
        a[(i, i)] = chi2.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    let factor = &l * &a;
    let mut wishart = &factor * factor.transpose();
    linalg::symmetrize(&mut wishart);
    linalg::inv_spd(&wishart)
}
