//! The possibilistic ensemble Kalman filter.
//!
//! Uncertainty about the state is epistemic: the ensemble weights encode how
//! possible each particle is, particle 0 is pinned to the expected value
//! (which propagates through arbitrary maps as `E*(F(x)) = F(E*(x))`), and
//! model-error uncertainty enters through a deterministic transport map
//! instead of sampled noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::gains::{compute_gains, posterior_mean, GainPair};
use crate::filters::ukf::{sigma_offsets, UkfConfig};
use crate::linalg;
use crate::maxdet::{fit_precision_with, FitOptions, SparsityPattern};
use crate::possibility::{GaussianPossibility, WeightedEnsemble};
use crate::rng;

/// How the initial particles are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `N` random draws from the probability distribution matching the prior.
    RandomPrior,
    /// The `2n` non-central sigma points of the unscented transform.
    UkfFull,
    /// Only the `n` sigma points along `+` Cholesky columns.
    UkfPlus,
    /// Only the `n` sigma points along `-` Cholesky columns.
    UkfMinus,
}

/// Builds the initial ensemble: particle 0 sits at the prior expected value
/// with weight one, and every other particle is weighted by evaluating the
/// prior possibility function at it.
pub fn penkf_init(
    prior: &GaussianPossibility,
    sample_size: usize,
    scheme: InitScheme,
    cfg: &UkfConfig,
    rng: &mut impl Rng,
) -> Result<WeightedEnsemble> {
    let n = prior.dim();
    let cov = prior.covariance().ok_or(Error::CovarianceUnavailable)?;
    let positions: Vec<DVector<f64>> = match scheme {
        InitScheme::RandomPrior => {
            let l = linalg::chol_lower(cov)?;
            (0..sample_size)
                .map(|_| rng::sample_mvn_chol(prior.mean(), &l, rng))
                .collect()
        }
        InitScheme::UkfFull => {
            if sample_size != 2 * n {
                return Err(Error::InvalidConfig(format!(
                    "ukf_full initialisation needs N = 2n (N = {sample_size}, n = {n})"
                )));
            }
            cfg.validate(n)?;
            let offsets = sigma_offsets(cov, n as f64 + cfg.lambda(n))?;
            offsets
                .iter()
                .map(|o| prior.mean() + o)
                .chain(offsets.iter().map(|o| prior.mean() - o))
                .collect()
        }
        InitScheme::UkfPlus | InitScheme::UkfMinus => {
            if sample_size != n {
                return Err(Error::InvalidConfig(format!(
                    "one-branch ukf initialisation needs N = n (N = {sample_size}, n = {n})"
                )));
            }
            cfg.validate(n)?;
            let offsets = sigma_offsets(cov, n as f64 + cfg.lambda(n))?;
            let sign = if scheme == InitScheme::UkfPlus { 1.0 } else { -1.0 };
            offsets.iter().map(|o| prior.mean() + sign * o).collect()
        }
    };
    let weighted: Result<Vec<(f64, DVector<f64>)>> = positions
        .into_iter()
        .map(|x| prior.eval(&x).map(|w| (w, x)))
        .collect();
    WeightedEnsemble::new(prior.mean().clone(), weighted?)
}

/// Prediction step: propagate every particle (including the mode) through
/// the transition, fit the precision of the propagated ensemble, and inject
/// the transition uncertainty `N̄(0, U)` by transporting the non-mode
/// particles with `T = (Σ̃ + U)^½ (Σ̃^½)⁻¹`. The predicted possibility
/// function is `N̄(μ, Σ̃ + U)` without refitting, since affine transports
/// conjugate the fit exactly.
pub fn penkf_predict<F>(
    ens: &WeightedEnsemble,
    transition: F,
    u: &DMatrix<f64>,
    pattern: &SparsityPattern,
    opts: &FitOptions,
) -> Result<(WeightedEnsemble, GaussianPossibility)>
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
    let propagated: Vec<DVector<f64>> = ens.particles().iter().map(|x| transition(x)).collect();
    if propagated.iter().any(|x| x.len() != n) {
        return Err(Error::DimensionMismatch(
            "transition changed the state dimension".into(),
        ));
    }
    let propagated = ens.with_particles(propagated);
    let mean = propagated.mode().clone();

    let fit = fit_precision_with(&propagated, pattern, opts)?;
    let l_prec = linalg::chol_lower(fit.precision())?;
    let mut fitted_cov = linalg::solve_with_chol(&l_prec, &DMatrix::identity(n, n))?;
    linalg::symmetrize(&mut fitted_cov);

    let mut pred_cov = &fitted_cov + u;
    linalg::symmetrize(&mut pred_cov);

    let no_uncertainty = u.iter().all(|&v| v == 0.0);
    let out = if no_uncertainty {
        propagated
    } else {
        let l_fit = linalg::chol_lower(&fitted_cov)?;
        let l_pred = linalg::chol_lower(&pred_cov)?;
        // T L_fit = L_pred, solved as L_fitᵀ Tᵀ = L_predᵀ.
        let t = l_fit
            .transpose()
            .solve_upper_triangular(&l_pred.transpose())
            .ok_or(Error::NotPositiveDefinite)?
            .transpose();
        let particles: Vec<DVector<f64>> = propagated
            .particles()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if i == 0 {
                    mean.clone()
                } else {
                    &mean + &t * (x - &mean)
                }
            })
            .collect();
        propagated.with_particles(particles)
    };

    let precision = linalg::inv_spd(&pred_cov)?;
    let predicted = GaussianPossibility::from_parts_unchecked(mean, precision, Some(pred_cov));
    Ok((out, predicted))
}

/// Update step, formally the square-root EnKF update: the mode moves to the
/// Kalman posterior expected value and deviations contract by `(I - K̃H)`,
/// so the best-fitting Gaussian of the updated ensemble is the Kalman
/// posterior `N̄(μ + K(y - Hμ), (I - KH)Σ)` with no refit needed.
pub fn penkf_update(
    ens: &WeightedEnsemble,
    predicted: &GaussianPossibility,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(WeightedEnsemble, GaussianPossibility)> {
    let innovation = y - h * predicted.mean();
    affine_update(ens, predicted, h, v, &innovation)
}

/// Update with a nonlinear observation map, linearised at the predicted
/// expected value: the observation matrix becomes the Jacobian there and the
/// innovation becomes `y - H(μ)`; everything else matches [`penkf_update`].
pub fn penkf_update_linearised<H, J>(
    ens: &WeightedEnsemble,
    predicted: &GaussianPossibility,
    y: &DVector<f64>,
    observation: H,
    jacobian: J,
    v: &DMatrix<f64>,
) -> Result<(WeightedEnsemble, GaussianPossibility)>
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let j = jacobian(predicted.mean());
    let predicted_obs = observation(predicted.mean());
    if predicted_obs.len() != y.len() || j.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "observation map returns length {}, jacobian has {} rows, y has length {}",
            predicted_obs.len(),
            j.nrows(),
            y.len()
        )));
    }
    let innovation = y - predicted_obs;
    affine_update(ens, predicted, &j, v, &innovation)
}

fn affine_update(
    ens: &WeightedEnsemble,
    predicted: &GaussianPossibility,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
    innovation: &DVector<f64>,
) -> Result<(WeightedEnsemble, GaussianPossibility)> {
    let n = ens.dim();
    if predicted.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "predicted possibility has dim {}, ensemble {n}",
            predicted.dim()
        )));
    }
    let cov = predicted.covariance().ok_or(Error::CovarianceUnavailable)?;
    let GainPair {
        standard_gain,
        adjusted_gain,
        ..
    } = compute_gains(cov, h, v)?;

    let mean = predicted.mean();
    let post_mean = posterior_mean(mean, &standard_gain, innovation);
    let contraction = DMatrix::identity(n, n) - &adjusted_gain * h;

    let particles: Vec<DVector<f64>> = ens
        .particles()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if i == 0 {
                post_mean.clone()
            } else {
                &post_mean + &contraction * (x - mean)
            }
        })
        .collect();

    let mut post_cov = (DMatrix::identity(n, n) - &standard_gain * h) * cov;
    linalg::symmetrize(&mut post_cov);
    let precision = linalg::inv_spd(&post_cov)?;
    let posterior =
        GaussianPossibility::from_parts_unchecked(post_mean, precision, Some(post_cov));
    Ok((ens.with_particles(particles), posterior))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxdet::fit_precision;
    use crate::rng::{stream_rng, StreamPurpose};
    use approx::assert_relative_eq;

    fn prior_1d() -> GaussianPossibility {
        GaussianPossibility::from_mean_cov(
            DVector::zeros(1),
            DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap()
    }

    #[test]
    fn init_pins_mode_with_unit_weight() {
        let prior = GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::identity(2, 2) * 3.0,
        )
        .unwrap();
        let mut rng = stream_rng(1, 0, StreamPurpose::PenkfInit);
        let ens = penkf_init(
            &prior,
            6,
            InitScheme::RandomPrior,
            &UkfConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(ens.sample_size(), 6);
        assert_eq!(ens.mode(), prior.mean());
        assert_eq!(ens.weights()[0], 1.0);
        for (i, &w) in ens.weights().iter().enumerate().skip(1) {
            assert!(w > 0.0 && w < 1.0, "weight {i} = {w}");
        }
    }

    #[test]
    fn init_ukf_full_matches_sigma_formulas() {
        // n = 1 with parameters chosen so that lambda = 0.625.
        let cfg = UkfConfig {
            alpha: 0.25,
            kappa: 25.0,
            beta: 2.0,
        };
        assert_relative_eq!(cfg.lambda(1), 0.625, epsilon = 1e-12);
        let prior = prior_1d();
        let mut rng = stream_rng(2, 0, StreamPurpose::PenkfInit);
        let ens = penkf_init(&prior, 2, InitScheme::UkfFull, &cfg, &mut rng).unwrap();
        let offset = 1.625f64.sqrt();
        assert_relative_eq!(ens.particles()[1][0], offset, epsilon = 1e-12);
        assert_relative_eq!(ens.particles()[2][0], -offset, epsilon = 1e-12);
        let expected_weight = (-0.8125f64).exp();
        assert_relative_eq!(ens.weights()[1], expected_weight, epsilon = 1e-12);
        assert_relative_eq!(ens.weights()[2], expected_weight, epsilon = 1e-12);
        assert_relative_eq!(expected_weight, 0.44374, epsilon = 1e-5);
    }

    #[test]
    fn init_branch_schemes_take_one_side() {
        let cfg = UkfConfig::default();
        let prior = GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let mut rng = stream_rng(3, 0, StreamPurpose::PenkfInit);
        let plus = penkf_init(&prior, 2, InitScheme::UkfPlus, &cfg, &mut rng).unwrap();
        let minus = penkf_init(&prior, 2, InitScheme::UkfMinus, &cfg, &mut rng).unwrap();
        for i in 1..=2 {
            let dp = &plus.particles()[i] - prior.mean();
            let dm = &minus.particles()[i] - prior.mean();
            assert_relative_eq!(dp, -dm, epsilon = 1e-12);
        }
        assert!(matches!(
            penkf_init(&prior, 3, InitScheme::UkfPlus, &cfg, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            penkf_init(&prior, 5, InitScheme::UkfFull, &cfg, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn predict_without_uncertainty_is_pure_propagation() {
        let ens = WeightedEnsemble::new(
            DVector::zeros(1),
            vec![((-0.5f64).exp(), DVector::from_vec(vec![1.0]))],
        )
        .unwrap();
        let (out, pred) = penkf_predict(
            &ens,
            |x| x.clone(),
            &DMatrix::zeros(1, 1),
            &SparsityPattern::Full,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(out.particles()[1][0], 1.0);
        assert_relative_eq!(pred.covariance().unwrap()[(0, 0)], 1.0, max_relative = 1e-8);
    }

    #[test]
    fn predict_scalar_transport_example() {
        // Fitted variance 1, transition uncertainty 3: particles stretch by
        // T = 2 and the predicted possibility function is N̄(0, 4).
        let ens = WeightedEnsemble::new(
            DVector::zeros(1),
            vec![((-0.5f64).exp(), DVector::from_vec(vec![1.0]))],
        )
        .unwrap();
        let (out, pred) = penkf_predict(
            &ens,
            |x| x.clone(),
            &DMatrix::from_vec(1, 1, vec![3.0]),
            &SparsityPattern::Full,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(out.particles()[0][0], 0.0);
        assert_relative_eq!(out.particles()[1][0], 2.0, max_relative = 1e-8);
        assert_relative_eq!(pred.covariance().unwrap()[(0, 0)], 4.0, max_relative = 1e-8);
        assert_eq!(out.weights(), ens.weights());

        // Refitting the transported ensemble recovers the predicted precision.
        let refit = fit_precision(&out, &SparsityPattern::Full).unwrap();
        assert_relative_eq!(refit.precision()[(0, 0)], 0.25, max_relative = 1e-6);
    }

    #[test]
    fn update_scalar_example() {
        let ens = WeightedEnsemble::new(
            DVector::zeros(1),
            vec![((-0.5f64).exp(), DVector::from_vec(vec![1.0]))],
        )
        .unwrap();
        let pred = prior_1d();
        let (out, post) = penkf_update(
            &ens,
            &pred,
            &DVector::from_vec(vec![2.0]),
            &DMatrix::identity(1, 1),
            &DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap();
        assert_relative_eq!(post.mean()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(post.covariance().unwrap()[(0, 0)], 0.5, epsilon = 1e-12);
        assert_eq!(out.particles()[0][0], post.mean()[0]);
        assert_relative_eq!(out.particles()[1][0], 1.70711, epsilon = 1e-5);
    }

    #[test]
    fn update_zero_innovation_contracts_around_mean() {
        let pred = GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let mut rng = stream_rng(8, 0, StreamPurpose::PenkfInit);
        let ens = penkf_init(
            &pred,
            4,
            InitScheme::RandomPrior,
            &UkfConfig::default(),
            &mut rng,
        )
        .unwrap();
        let h = DMatrix::identity(2, 2);
        let v = DMatrix::identity(2, 2) * 0.5;
        let y = &h * pred.mean();
        let (out, post) = penkf_update(&ens, &pred, &y, &h, &v).unwrap();
        assert_relative_eq!(post.mean(), pred.mean(), epsilon = 1e-12);
        assert_eq!(out.particles()[0], *post.mean());
        let gains = compute_gains(pred.covariance().unwrap(), &h, &v).unwrap();
        let expected =
            (DMatrix::identity(2, 2) - &gains.standard_gain * &h) * pred.covariance().unwrap();
        assert_relative_eq!(post.covariance().unwrap(), &expected, epsilon = 1e-12);
    }

    #[test]
    fn update_refit_recovers_kalman_posterior() {
        // The module's key consistency property: refitting the updated
        // ensemble reproduces the posterior covariance.
        let mut rng = stream_rng(12, 0, StreamPurpose::PenkfInit);
        let pred = GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![0.5, -0.3, 1.0]),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.5, -0.2, 0.1, -0.2, 1.0]),
        )
        .unwrap();
        let ens = penkf_init(
            &pred,
            6,
            InitScheme::RandomPrior,
            &UkfConfig::default(),
            &mut rng,
        )
        .unwrap();
        // Compose the steps the way the filter does: the predicted Gaussian
        // returned here is exactly the ensemble's best fit (U = 0).
        let (ens, pred) = penkf_predict(
            &ens,
            |x| x.clone(),
            &DMatrix::zeros(3, 3),
            &SparsityPattern::Full,
            &FitOptions::default(),
        )
        .unwrap();

        let h = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let v = DMatrix::from_vec(1, 1, vec![0.1]);
        let y = DVector::from_vec(vec![1.3]);
        let (out, post) = penkf_update(&ens, &pred, &y, &h, &v).unwrap();

        let refit = fit_precision(&out, &SparsityPattern::Full).unwrap();
        let refit_cov = crate::linalg::inv_spd(refit.precision()).unwrap();
        let expected = post.covariance().unwrap();
        let rel = (&refit_cov - expected).norm() / expected.norm();
        assert!(rel < 2e-4, "refit covariance off by {rel}");
    }

    #[test]
    fn linearised_update_matches_linear_path_exactly() {
        let pred = GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![0.5, -0.3]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7]),
        )
        .unwrap();
        let mut rng = stream_rng(5, 0, StreamPurpose::PenkfInit);
        let ens = penkf_init(
            &pred,
            4,
            InitScheme::RandomPrior,
            &UkfConfig::default(),
            &mut rng,
        )
        .unwrap();
        let h = DMatrix::from_row_slice(1, 2, &[1.0, -0.5]);
        let v = DMatrix::from_vec(1, 1, vec![0.2]);
        let y = DVector::from_vec(vec![0.9]);

        let (lin_ens, lin_post) = penkf_update(&ens, &pred, &y, &h, &v).unwrap();
        let (map_ens, map_post) = penkf_update_linearised(
            &ens,
            &pred,
            &y,
            |x| &h * x,
            |_| h.clone(),
            &v,
        )
        .unwrap();
        for (a, b) in lin_ens.particles().iter().zip(map_ens.particles()) {
            assert_eq!(a, b);
        }
        assert_eq!(lin_post.mean(), map_post.mean());
    }

    #[test]
    fn linearised_update_quadratic_observation() {
        // H(x) = x² around mu = 1 with y = 1: zero innovation.
        let pred = prior_1d_shifted(1.0);
        let ens = ens_around(&pred);
        let (_, post) = penkf_update_linearised(
            &ens,
            &pred,
            &DVector::from_vec(vec![1.0]),
            |x| DVector::from_vec(vec![x[0] * x[0]]),
            |x| DMatrix::from_vec(1, 1, vec![2.0 * x[0]]),
            &DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap();
        assert_relative_eq!(post.mean()[0], 1.0, epsilon = 1e-12);

        // mu = 2, sigma² = 1, V = 1, y = 5: J = 4, S = 17, K = 4/17.
        let pred = prior_1d_shifted(2.0);
        let ens = ens_around(&pred);
        let (_, post) = penkf_update_linearised(
            &ens,
            &pred,
            &DVector::from_vec(vec![5.0]),
            |x| DVector::from_vec(vec![x[0] * x[0]]),
            |x| DMatrix::from_vec(1, 1, vec![2.0 * x[0]]),
            &DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap();
        assert_relative_eq!(post.mean()[0], 2.0 + 4.0 / 17.0, epsilon = 1e-12);
        assert_relative_eq!(post.mean()[0], 2.23529, epsilon = 1e-5);
    }

    fn prior_1d_shifted(mean: f64) -> GaussianPossibility {
        GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![mean]),
            DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap()
    }

    fn ens_around(g: &GaussianPossibility) -> WeightedEnsemble {
        WeightedEnsemble::new(
            g.mean().clone(),
            vec![(
                (-0.5f64).exp(),
                g.mean() + DVector::from_vec(vec![1.0]),
            )],
        )
        .unwrap()
    }

    #[test]
    fn weights_are_immutable_across_steps() {
        let prior = GaussianPossibility::from_mean_cov(
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 10.0,
        )
        .unwrap();
        let mut rng = stream_rng(7, 0, StreamPurpose::PenkfInit);
        let mut ens = penkf_init(
            &prior,
            4,
            InitScheme::RandomPrior,
            &UkfConfig::default(),
            &mut rng,
        )
        .unwrap();
        let w0: Vec<f64> = ens.weights().to_vec();
        let f = crate::models::linear_transition_matrix(2, 0.1);
        let u = DMatrix::identity(2, 2) * 0.01;
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let v = DMatrix::from_vec(1, 1, vec![0.1]);
        for step in 0..10 {
            let (pred_ens, pred) = penkf_predict(
                &ens,
                |x| &f * x,
                &u,
                &SparsityPattern::Full,
                &FitOptions::default(),
            )
            .unwrap();
            let y = DVector::from_vec(vec![0.1 * step as f64]);
            let (post_ens, post) = penkf_update(&pred_ens, &pred, &y, &h, &v).unwrap();
            // Mode pinning is exact at every step.
            assert_eq!(post_ens.particles()[0], *post.mean());
            ens = post_ens;
        }
        let w1: Vec<f64> = ens.weights().to_vec();
        assert_eq!(w0, w1);
    }
}
