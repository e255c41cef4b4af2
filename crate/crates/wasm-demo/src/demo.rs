//! Demo computations behind the browser page, kept free of wasm types so
//! they run (and are tested) on any target.

use nalgebra::{DMatrix, DVector};
use penkf::error::{Error, Result};
use penkf::experiment::{
    run_experiment_rows, Algorithm, ExperimentConfig, MetricKind, MetricRow,
};
use penkf::filters::{
    enkf_predict, penkf_init, penkf_predict, penkf_update, sqrt_enkf_update, InitScheme,
    ProbEnsemble, UkfConfig,
};
use penkf::linalg;
use penkf::maxdet::{fit_precision, nongaussianity_gaps, FitOptions, SparsityPattern};
use penkf::metrics::rmse;
use penkf::models::{simulate_trajectory, Lr96Config, Model};
use penkf::possibility::GaussianPossibility;
use penkf::rng::{sample_mvn_chol, stream_rng, StreamPurpose};
use serde::Serialize;

/// A 1-sigma covariance contour for canvas rendering: centre, semi-axes,
/// and the angle of the first axis.
#[derive(Debug, Clone, Serialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

fn ellipse_from_cov(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Ellipse {
    let eig = linalg::symmetric_part(cov).symmetric_eigen();
    let rx = eig.eigenvalues[0].max(0.0).sqrt();
    let ry = eig.eigenvalues[1].max(0.0).sqrt();
    Ellipse {
        cx: mean[0],
        cy: mean[1],
        rx,
        ry,
        angle: eig.eigenvectors[(1, 0)].atan2(eig.eigenvectors[(0, 0)]),
    }
}

/// Output of the 2-D Gaussian-envelope fitting playground.
#[derive(Debug, Clone, Serialize)]
pub struct FitDemoOutput {
    /// `(x, y, weight)` triples; the mode particle is first.
    pub particles: Vec<(f64, f64, f64)>,
    pub truth: Ellipse,
    pub sample: Ellipse,
    pub fitted: Ellipse,
    /// Per-particle non-Gaussianity gaps of the fit.
    pub gaps: Vec<f64>,
    pub log_det_truth: f64,
    pub log_det_sample: f64,
    pub log_det_fitted: f64,
}

/// Draws a weighted ensemble from a correlated 2-D Gaussian possibility
/// function and fits its envelope, optionally with a diagonal (localised)
/// precision.
pub fn gaussian_fit_demo(
    seed: u64,
    sample_size: usize,
    correlation: f64,
    scale: f64,
    localise: bool,
) -> Result<FitDemoOutput> {
    if !(0..=512).contains(&sample_size) || sample_size < 2 {
        return Err(Error::InvalidConfig(
            "sample size must lie in 2..=512".into(),
        ));
    }
    if !(-0.95..=0.95).contains(&correlation) || !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidConfig(
            "need |correlation| <= 0.95 and a positive scale".into(),
        ));
    }
    let cov = DMatrix::from_row_slice(
        2,
        2,
        &[scale, correlation * scale, correlation * scale, scale],
    );
    let truth = GaussianPossibility::from_mean_cov(DVector::zeros(2), cov.clone())?;
    let l = linalg::chol_lower(&cov)?;

    let mut rng = stream_rng(seed, 0, StreamPurpose::VarianceRecovery);
    let zero = DVector::zeros(2);
    let weighted: Result<Vec<(f64, DVector<f64>)>> = (0..sample_size)
        .map(|_| {
            let x = sample_mvn_chol(&zero, &l, &mut rng);
            truth.eval(&x).map(|w| (w, x))
        })
        .collect();
    let ens = penkf::WeightedEnsemble::new(zero.clone(), weighted?)?;

    let pattern = if localise {
        SparsityPattern::Banded { bandwidth: 1 }
    } else {
        SparsityPattern::Full
    };
    let fit = fit_precision(&ens, &pattern)?;
    let gaps = nongaussianity_gaps(&ens, &fit)?;
    let fitted_cov = linalg::inv_spd(fit.precision())?;

    let mut sample_mean = DVector::zeros(2);
    for x in &ens.particles()[1..] {
        sample_mean += x;
    }
    sample_mean /= sample_size as f64;
    let mut sample_cov = DMatrix::<f64>::zeros(2, 2);
    for x in &ens.particles()[1..] {
        let d = x - &sample_mean;
        sample_cov += &d * d.transpose();
    }
    sample_cov /= (sample_size.max(2) - 1) as f64;

    Ok(FitDemoOutput {
        particles: ens
            .particles()
            .iter()
            .zip(ens.weights())
            .map(|(x, &w)| (x[0], x[1], w))
            .collect(),
        truth: ellipse_from_cov(&zero, &cov),
        sample: ellipse_from_cov(&sample_mean, &sample_cov),
        fitted: ellipse_from_cov(&zero, &fitted_cov),
        gaps,
        log_det_truth: linalg::log_det_spd(&cov)?,
        log_det_sample: linalg::log_det_spd(&sample_cov).unwrap_or(f64::NEG_INFINITY),
        log_det_fitted: linalg::log_det_spd(&fitted_cov)?,
    })
}

/// One per-step curve of the linear twin experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

/// Output of the single-repeat linear twin experiment.
#[derive(Debug, Clone, Serialize)]
pub struct LinearDemoOutput {
    /// RMSE of each ensemble method against the Kalman posterior mean
    /// (log-scale material).
    pub rmse_vs_kf: Vec<Series>,
    /// Mahalanobis distance between each posterior and the true state.
    pub mahalanobis: Vec<Series>,
}

fn pivot(rows: &[MetricRow], algorithm: Algorithm, metric: MetricKind) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.algorithm == algorithm && r.metric == metric)
        .map(|r| r.value)
        .collect()
}

/// Runs KF, StEnKF, SqrtEnKF, and p-EnKF on one simulated truth of the
/// bidiagonal linear model and reports tracking error and calibration.
pub fn linear_demo(
    n: usize,
    m: usize,
    sample_size: usize,
    steps: usize,
    seed: u64,
) -> Result<LinearDemoOutput> {
    if n > 12 || steps > 500 {
        return Err(Error::InvalidConfig(
            "demo limits: n <= 12 and steps <= 500".into(),
        ));
    }
    let cfg = ExperimentConfig {
        model: Model::Linear(penkf::models::LinearModelConfig {
            n,
            m,
            lambda_coupling: 0.1,
            u_scale: 0.01,
            v_scale: 0.1,
            init_mean: None,
            init_var_scale: 10.0,
        }),
        algorithms: vec![
            Algorithm::Kf,
            Algorithm::Stenkf,
            Algorithm::Sqrtenkf,
            Algorithm::Penkf,
        ],
        ensemble_n: Some(sample_size),
        init_scheme: InitScheme::RandomPrior,
        localisation: SparsityPattern::Full,
        steps,
        repeats: 1,
        master_seed: seed,
        metrics: Some(vec![MetricKind::RmseKfMean, MetricKind::Mahalanobis]),
        ukf: UkfConfig::default(),
        solver: FitOptions::default(),
    };
    let rows = run_experiment_rows(&cfg, 1)?;
    let rmse_vs_kf = vec![
        Series {
            label: "p-EnKF".into(),
            values: pivot(&rows, Algorithm::Penkf, MetricKind::RmseKfMean),
        },
        Series {
            label: "SqrtEnKF".into(),
            values: pivot(&rows, Algorithm::Sqrtenkf, MetricKind::RmseKfMean),
        },
        Series {
            label: "StEnKF".into(),
            values: pivot(&rows, Algorithm::Stenkf, MetricKind::RmseKfMean),
        },
    ];
    let mahalanobis = vec![
        Series {
            label: "KF".into(),
            values: pivot(&rows, Algorithm::Kf, MetricKind::Mahalanobis),
        },
        Series {
            label: "p-EnKF".into(),
            values: pivot(&rows, Algorithm::Penkf, MetricKind::Mahalanobis),
        },
        Series {
            label: "StEnKF".into(),
            values: pivot(&rows, Algorithm::Stenkf, MetricKind::Mahalanobis),
        },
    ];
    Ok(LinearDemoOutput {
        rmse_vs_kf,
        mahalanobis,
    })
}

/// Output of the Lorenz-96 tracking demo: the observed component over time
/// with the p-EnKF band around it, plus whole-state error curves.
#[derive(Debug, Clone, Serialize)]
pub struct Lr96DemoOutput {
    pub truth: Vec<f64>,
    /// Noisy observations of the component, when it is observed.
    pub observations: Option<Vec<f64>>,
    pub penkf_mean: Vec<f64>,
    /// One-sigma width of the p-EnKF posterior in the component.
    pub penkf_sd: Vec<f64>,
    pub sqrt_mean: Vec<f64>,
    pub rmse_penkf: Vec<f64>,
    pub rmse_sqrt: Vec<f64>,
}

/// Tracks one component of the modified Lorenz-96 system with the p-EnKF
/// and the square-root EnKF on a shared observation sequence.
pub fn lr96_demo(
    n: usize,
    m: usize,
    sample_size: usize,
    steps: usize,
    seed: u64,
    component: usize,
) -> Result<Lr96DemoOutput> {
    if n < 4 || n > 12 || steps > 500 {
        return Err(Error::InvalidConfig(
            "demo limits: 4 <= n <= 12 and steps <= 500".into(),
        ));
    }
    if component >= n {
        return Err(Error::InvalidConfig(format!(
            "component {component} out of range for n = {n}"
        )));
    }
    let model = Model::Lr96(Lr96Config {
        n,
        m,
        forcing: 8.0,
        boundary_const: 1.0,
        dt: 0.01,
        u_scale: 0.01,
        v_scale: 0.1,
        init_mean: None,
        init_var_scale: 10.0,
    });
    model.validate()?;
    if sample_size < n {
        return Err(Error::InvalidConfig(
            "the p-EnKF needs N >= n with the full pattern".into(),
        ));
    }

    let mut traj_rng = stream_rng(seed, 0, StreamPurpose::Trajectory);
    let traj = simulate_trajectory(&model, steps, &mut traj_rng);
    let h = model.observation_matrix();
    let u = model.transition_cov();
    let v = model.observation_cov();

    // p-EnKF pass.
    let prior = GaussianPossibility::from_mean_cov(model.init_mean(), model.init_cov())?;
    let mut penkf_rng = stream_rng(seed, 0, StreamPurpose::PenkfInit);
    let mut ens = penkf_init(
        &prior,
        sample_size,
        InitScheme::RandomPrior,
        &UkfConfig::default(),
        &mut penkf_rng,
    )?;
    let mut penkf_mean = Vec::with_capacity(steps);
    let mut penkf_sd = Vec::with_capacity(steps);
    let mut rmse_penkf = Vec::with_capacity(steps);
    for (k, y) in traj.observations.iter().enumerate() {
        let (pred_ens, pred) = penkf_predict(
            &ens,
            |x| model.transition(x),
            &u,
            &SparsityPattern::Full,
            &FitOptions::default(),
        )?;
        let (post_ens, post) = penkf_update(&pred_ens, &pred, y, &h, &v)?;
        penkf_mean.push(post.mean()[component]);
        penkf_sd.push(
            post.covariance()
                .map(|c| c[(component, component)].max(0.0).sqrt())
                .unwrap_or(f64::NAN),
        );
        rmse_penkf.push(rmse(post.mean(), &traj.states[k + 1])?);
        ens = post_ens;
    }

    // Square-root EnKF pass on the same observations.
    let mut sqrt_rng = stream_rng(seed, 0, StreamPurpose::SqrtEnkf);
    let mut prob = ProbEnsemble::sample_from_prior(
        &model.init_mean(),
        &model.init_cov(),
        sample_size + 1,
        &mut sqrt_rng,
    )?;
    let mut sqrt_mean = Vec::with_capacity(steps);
    let mut rmse_sqrt = Vec::with_capacity(steps);
    for (k, y) in traj.observations.iter().enumerate() {
        let (pred, mean, cov) = enkf_predict(&prob, |x| model.transition(x), &u, &mut sqrt_rng)?;
        prob = sqrt_enkf_update(&pred, &mean, &cov, y, &h, &v)?;
        let post_mean = prob.sample_mean();
        sqrt_mean.push(post_mean[component]);
        rmse_sqrt.push(rmse(&post_mean, &traj.states[k + 1])?);
    }

    Ok(Lr96DemoOutput {
        truth: traj.states[1..].iter().map(|x| x[component]).collect(),
        observations: (component < m)
            .then(|| traj.observations.iter().map(|y| y[component]).collect()),
        penkf_mean,
        penkf_sd,
        sqrt_mean,
        rmse_penkf,
        rmse_sqrt,
    })
}
