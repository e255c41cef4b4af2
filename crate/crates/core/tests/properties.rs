//! Property tests for the algebraic invariants of the possibility
//! operations and the fit solver.

use nalgebra::{DMatrix, DVector};
use penkf::filters::{kf_predict, kf_update, penkf_init, penkf_predict, penkf_update};
use penkf::filters::{InitScheme, KalmanState, UkfConfig};
use penkf::maxdet::{fit_precision, fit_precision_1d, FitOptions, SparsityPattern};
use penkf::models::linear_transition_matrix;
use penkf::possibility::GaussianPossibility;
use penkf::rng::{standard_normal_vector, stream_rng, StreamPurpose};
use penkf::WeightedEnsemble;
use proptest::prelude::*;

fn vec_strategy(n: usize) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-5.0f64..5.0, n).prop_map(DVector::from_vec)
}

/// Random symmetric positive-definite matrix with a bounded condition number.
fn spd_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |vals| {
        let a = DMatrix::from_vec(n, n, vals);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    })
}

/// Random well-conditioned square matrix (identity plus a contraction).
fn invertible_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-0.5f64..0.5, n * n).prop_map(move |vals| {
        DMatrix::identity(n, n) + DMatrix::from_vec(n, n, vals) / n as f64
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eval_stays_in_unit_interval(
        mean in vec_strategy(3),
        cov in spd_strategy(3),
        x in vec_strategy(3),
    ) {
        let g = GaussianPossibility::from_mean_cov(mean, cov).unwrap();
        let v = g.eval(&x).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
        prop_assert_eq!(g.eval(g.mean()).unwrap(), 1.0);
    }

    #[test]
    fn linear_transform_composes(
        mean in vec_strategy(3),
        cov in spd_strategy(3),
        a in invertible_strategy(3),
        b in vec_strategy(3),
        c in invertible_strategy(3),
        d in vec_strategy(3),
    ) {
        let g = GaussianPossibility::from_mean_cov(mean, cov).unwrap();
        let two_steps = g
            .linear_transform(&a, &b)
            .unwrap()
            .linear_transform(&c, &d)
            .unwrap();
        let composed = g.linear_transform(&(&c * &a), &(&c * &b + &d)).unwrap();
        let scale = composed.covariance().unwrap().amax().max(1.0);
        prop_assert!((two_steps.mean() - composed.mean()).amax() < 1e-10);
        prop_assert!(
            (two_steps.covariance().unwrap() - composed.covariance().unwrap()).amax()
                < 1e-10 * scale
        );
    }

    #[test]
    fn transform_is_change_of_variable(
        mean in vec_strategy(2),
        cov in spd_strategy(2),
        a in invertible_strategy(2),
        b in vec_strategy(2),
        x in vec_strategy(2),
    ) {
        // Pushing through x -> Ax + b preserves the possibility value at the
        // image of any point.
        let g = GaussianPossibility::from_mean_cov(mean, cov).unwrap();
        let pushed = g.linear_transform(&a, &b).unwrap();
        let lhs = pushed.eval(&(&a * &x + &b)).unwrap();
        let rhs = g.eval(&x).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transport_round_trip_is_identity(
        mean_a in vec_strategy(3),
        cov_a in spd_strategy(3),
        mean_b in vec_strategy(3),
        cov_b in spd_strategy(3),
    ) {
        let g = GaussianPossibility::from_mean_cov(mean_a, cov_a).unwrap();
        let h = GaussianPossibility::from_mean_cov(mean_b, cov_b).unwrap();
        let forward = g.transport_map(&h).unwrap();
        let back = h.transport_map(&g).unwrap();
        let round = back.compose(&forward).unwrap();
        prop_assert!((round.linear() - DMatrix::identity(3, 3)).amax() < 1e-8);
        prop_assert!(round.offset().amax() < 1e-8);
    }

    #[test]
    fn bayes_update_with_huge_noise_returns_prior(
        mean in vec_strategy(2),
        cov in spd_strategy(2),
        y in vec_strategy(2),
    ) {
        let g = GaussianPossibility::from_mean_cov(mean, cov).unwrap();
        let post = g
            .bayes_update(&y, &DMatrix::identity(2, 2), &(DMatrix::identity(2, 2) * 1e8))
            .unwrap();
        prop_assert!((post.mean() - g.mean()).amax() < 1e-3);
        prop_assert!((post.covariance().unwrap() - g.covariance().unwrap()).amax() < 1e-3);
    }

    #[test]
    fn transport_pushes_source_onto_target(
        mean_a in vec_strategy(2),
        cov_a in spd_strategy(2),
        mean_b in vec_strategy(2),
        cov_b in spd_strategy(2),
    ) {
        let g = GaussianPossibility::from_mean_cov(mean_a, cov_a).unwrap();
        let h = GaussianPossibility::from_mean_cov(mean_b.clone(), cov_b.clone()).unwrap();
        let map = g.transport_map(&h).unwrap();
        let pushed = g.linear_transform(map.linear(), map.offset()).unwrap();
        prop_assert!((pushed.mean() - &mean_b).amax() < 1e-8);
        prop_assert!((pushed.covariance().unwrap() - &cov_b).amax() < 1e-8);
    }

    #[test]
    fn one_dimensional_routes_agree(
        // Random 1-D weighted ensembles: the barrier solver must match the
        // closed form.
        particles in proptest::collection::vec((0.05f64..0.95, -4.0f64..4.0), 1..6),
        mode in -2.0f64..2.0,
    ) {
        prop_assume!(particles.iter().any(|&(_, x)| (x - mode).abs() > 1e-3));
        let ens = WeightedEnsemble::new(
            DVector::from_vec(vec![mode]),
            particles
                .iter()
                .map(|&(w, x)| (w, DVector::from_vec(vec![x])))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let closed_form = fit_precision_1d(&ens).unwrap();
        let solver = fit_precision(&ens, &SparsityPattern::Full).unwrap().precision()[(0, 0)];
        prop_assert!(
            (solver - closed_form).abs() <= 1e-9 * closed_form.max(1.0),
            "solver {} vs closed form {}", solver, closed_form
        );
    }
}

/// Stepwise equivalence with the Kalman filter on the linear model: with a
/// sigma-point initialisation the initial fit recovers the prior covariance
/// exactly, and every later fit is an exact affine conjugation, so the
/// p-EnKF posterior tracks the KF within solver tolerance at every step.
#[test]
fn penkf_matches_kf_stepwise_on_linear_model() {
    let n = 4;
    let m = 2;
    let f = linear_transition_matrix(n, 0.1);
    let u = DMatrix::identity(n, n) * 0.01;
    let h = penkf::models::observation_matrix(n, m);
    let v = DMatrix::identity(m, m) * 0.1;
    let ukf_cfg = UkfConfig::default();

    let prior_mean = DVector::zeros(n);
    let prior_cov = DMatrix::identity(n, n) * 10.0;
    let prior = GaussianPossibility::from_mean_cov(prior_mean.clone(), prior_cov.clone()).unwrap();

    let mut rng = stream_rng(17, 0, StreamPurpose::PenkfInit);
    let mut ens = penkf_init(&prior, 2 * n, InitScheme::UkfFull, &ukf_cfg, &mut rng).unwrap();
    let mut kf = KalmanState::new(prior_mean, prior_cov).unwrap();

    let mut obs_rng = stream_rng(17, 0, StreamPurpose::Trajectory);
    for step in 0..100 {
        let y = standard_normal_vector(m, &mut obs_rng) * 2.0
            + DVector::from_element(m, (step as f64 * 0.1).sin());

        kf = kf_update(&kf_predict(&kf, &f, &u), &y, &h, &v).unwrap();

        let (pred_ens, pred) = penkf_predict(
            &ens,
            |x| &f * x,
            &u,
            &SparsityPattern::Full,
            &FitOptions::default(),
        )
        .unwrap();
        let (post_ens, post) = penkf_update(&pred_ens, &pred, &y, &h, &v).unwrap();
        ens = post_ens;

        let mean_err = (post.mean() - &kf.mean).norm() / kf.mean.norm().max(1.0);
        let cov_err =
            (post.covariance().unwrap() - &kf.covariance).norm() / kf.covariance.norm();
        assert!(
            mean_err < 1e-5,
            "step {step}: posterior mean off by {mean_err}"
        );
        assert!(
            cov_err < 1e-5,
            "step {step}: posterior covariance off by {cov_err}"
        );
    }
}

/// Covariance-recovery trend at n = 4: the error of the fitted covariance is
/// non-increasing in the sample size over {n, 2n, n², 2n²} and has dropped
/// clearly by N = n².
#[test]
fn variance_recovery_trend_small_dimension() {
    let cfg = penkf::experiment::VarianceRecoveryConfig {
        dim: 4,
        sample_sizes: vec![4, 8, 16, 32],
        trials: 200,
        master_seed: 2024,
    };
    let rows = penkf::experiment::run_variance_recovery_rows(&cfg, 2).unwrap();
    let mean_rmse = |size: usize| -> f64 {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.sample_size == size && r.method == "possibilistic")
            .map(|r| r.frobenius_rmse)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let errs: Vec<f64> = [4, 8, 16, 32].iter().map(|&s| mean_rmse(s)).collect();
    for pair in errs.windows(2) {
        assert!(
            pair[1] <= pair[0] * 1.02,
            "recovery error should not increase with N: {errs:?}"
        );
    }
    assert!(
        errs[2] < 0.6 * errs[0],
        "expected a clear drop by N = n²: {errs:?}"
    );
}
