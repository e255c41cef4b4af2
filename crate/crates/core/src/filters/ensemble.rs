//! Probabilistic ensemble filters: stochastic and square-root EnKF.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::filters::gains::{compute_gains, posterior_mean};
use crate::linalg;
use crate::rng;

/// An unweighted ensemble of at least two members, so that the sample
/// covariance (divisor `N - 1`) is defined.
#[derive(Debug, Clone)]
pub struct ProbEnsemble {
    members: Vec<DVector<f64>>,
}

impl ProbEnsemble {
    pub fn new(members: Vec<DVector<f64>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidEnsemble(
                "a probabilistic ensemble needs at least two members".into(),
            ));
        }
        let dim = members[0].len();
        if members.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidEnsemble(
                "ensemble members must share one dimension".into(),
            ));
        }
        Ok(Self { members })
    }

    /// Draws `count` members from `N(mean, cov)`.
    pub fn sample_from_prior(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let l = linalg::chol_lower_psd(cov)?;
        Self::new(
            (0..count)
                .map(|_| rng::sample_mvn_chol(mean, &l, rng))
                .collect(),
        )
    }

    pub fn members(&self) -> &[DVector<f64>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn sample_mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim());
        for m in &self.members {
            mean += m;
        }
        mean / self.members.len() as f64
    }

    /// Sample covariance about the sample mean, divisor `N - 1`.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let mean = self.sample_mean();
        let mut cov = DMatrix::zeros(self.dim(), self.dim());
        for m in &self.members {
            let d = m - &mean;
            cov += &d * d.transpose();
        }
        cov /= (self.members.len() - 1) as f64;
        linalg::symmetrize(&mut cov);
        cov
    }
}

/// EnKF prediction: each member is pushed through the transition and
/// perturbed with an independent `N(0, U)` draw; returns the predictive
/// ensemble with its sample mean and covariance.
pub fn enkf_predict<F>(
    ens: &ProbEnsemble,
    transition: F,
    u: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<(ProbEnsemble, DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = ens.dim();
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "transition covariance is {}x{}, state dim {n}",
            u.nrows(),
            u.ncols()
        )));
    }
    let l = linalg::chol_lower_psd(u)?;
    let members: Vec<DVector<f64>> = ens
        .members
        .iter()
        .map(|m| transition(m) + &l * rng::standard_normal_vector(n, rng))
        .collect();
    let out = ProbEnsemble::new(members)?;
    let mean = out.sample_mean();
    let cov = out.sample_covariance();
    Ok((out, mean, cov))
}

/// Square-root EnKF update: the posterior mean uses the standard gain while
/// member deviations contract through `(I - K̃H)`, which reproduces the
/// Kalman posterior covariance deterministically rather than in expectation.
pub fn sqrt_enkf_update(
    ens: &ProbEnsemble,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<ProbEnsemble> {
    let gains = compute_gains(cov, h, v)?;
    let post_mean = posterior_mean(mean, &gains.standard_gain, &(y - h * mean));
    let contraction = DMatrix::identity(ens.dim(), ens.dim()) - &gains.adjusted_gain * h;
    ProbEnsemble::new(
        ens.members
            .iter()
            .map(|m| &contraction * (m - mean) + &post_mean)
            .collect(),
    )
}

/// Stochastic EnKF update with perturbed observations: each member is pulled
/// toward its own noisy copy of the observation through the standard gain.
pub fn stenkf_update(
    ens: &ProbEnsemble,
    _mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<ProbEnsemble> {
    let gains = compute_gains(cov, h, v)?;
    let lv = linalg::chol_lower_psd(v)?;
    let m = y.len();
    ProbEnsemble::new(
        ens.members
            .iter()
            .map(|member| {
                let eta = &lv * rng::standard_normal_vector(m, rng);
                member + &gains.standard_gain * (y + eta - h * member)
            })
            .collect(),
    )
}
