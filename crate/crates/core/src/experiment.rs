//! Configuration-driven experiment execution with deterministic output.
//!
//! One experiment simulates `repeats` independent ground truths; within a
//! repeat every requested algorithm filters the *same* observation sequence,
//! so metric differences between algorithms are paired. Every random draw
//! comes from a stream derived from `(master_seed, repeat, purpose)`, which
//! makes the emitted CSV a pure function of the configuration and seed,
//! independent of thread count.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    enkf_predict, kf_predict, kf_update, penkf_init, penkf_predict, penkf_update,
    sqrt_enkf_update, stenkf_update, ukf_step, InitScheme, KalmanState, ProbEnsemble, UkfConfig,
};
use crate::linalg;
use crate::maxdet::{fit_precision_with, FitOptions, SparsityPattern};
use crate::metrics::{self, DIVERGENCE_NORM};
use crate::models::{sample_inverse_wishart, simulate_trajectory, Model, Trajectory};
use crate::possibility::{GaussianPossibility, WeightedEnsemble};
use crate::rng::{sample_mvn_chol, stream_rng, StreamPurpose};

/// Algorithms the runner can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Kf,
    Stenkf,
    Sqrtenkf,
    Ukf,
    Penkf,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Kf => "kf",
            Algorithm::Stenkf => "stenkf",
            Algorithm::Sqrtenkf => "sqrtenkf",
            Algorithm::Ukf => "ukf",
            Algorithm::Penkf => "penkf",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metric identifiers; the `*_kf_*` metrics compare against the Kalman
/// reference and therefore need the KF among the algorithms on a linear
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RmseTrue,
    RmseKfMean,
    RmseKfVar,
    LogDetVar,
    Mahalanobis,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::RmseTrue => "rmse_true",
            MetricKind::RmseKfMean => "rmse_kf_mean",
            MetricKind::RmseKfVar => "rmse_kf_var",
            MetricKind::LogDetVar => "log_det_var",
            MetricKind::Mahalanobis => "mahalanobis",
        }
    }

    fn needs_kf_reference(&self) -> bool {
        matches!(self, MetricKind::RmseKfMean | MetricKind::RmseKfVar)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_steps() -> usize {
    100
}
fn default_repeats() -> usize {
    1
}
fn default_init_scheme() -> InitScheme {
    InitScheme::RandomPrior
}
fn default_pattern() -> SparsityPattern {
    SparsityPattern::Full
}

/// Experiment description as read from a JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Model,
    pub algorithms: Vec<Algorithm>,
    /// Non-mode sample size `N`; ensembles hold `N + 1` members. Defaults
    /// to twice the state dimension.
    #[serde(default)]
    pub ensemble_n: Option<usize>,
    #[serde(default = "default_init_scheme")]
    pub init_scheme: InitScheme,
    #[serde(default = "default_pattern")]
    pub localisation: SparsityPattern,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Metrics to record; when omitted, every metric valid for the setup.
    #[serde(default)]
    pub metrics: Option<Vec<MetricKind>>,
    #[serde(default)]
    pub ukf: UkfConfig,
    #[serde(default)]
    pub solver: FitOptions,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Validates the configuration and fills in defaults.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        self.model.validate()?;
        self.localisation.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("no algorithms requested".into()));
        }
        let mut seen = Vec::new();
        for a in &self.algorithms {
            if seen.contains(a) {
                return Err(Error::InvalidConfig(format!("duplicate algorithm {a}")));
            }
            seen.push(*a);
        }
        if self.steps == 0 || self.repeats == 0 {
            return Err(Error::InvalidConfig(
                "steps and repeats must be at least 1".into(),
            ));
        }
        let n = self.model.dim();
        let has_kf = self.algorithms.contains(&Algorithm::Kf);
        if has_kf && !self.model.is_linear() {
            return Err(Error::InvalidConfig(
                "the Kalman filter reference needs the linear model".into(),
            ));
        }
        let ensemble_n = self.ensemble_n.unwrap_or(2 * n);
        if ensemble_n == 0 {
            return Err(Error::InvalidConfig("ensemble_n must be positive".into()));
        }

        if self.algorithms.contains(&Algorithm::Penkf) {
            if matches!(self.localisation, SparsityPattern::Full) && ensemble_n < n {
                return Err(Error::InvalidConfig(format!(
                    "the p-EnKF with a full precision pattern needs N >= n \
                     (N = {ensemble_n}, n = {n}); a sparsity pattern can lower this"
                )));
            }
            match self.init_scheme {
                InitScheme::UkfFull if ensemble_n != 2 * n => {
                    return Err(Error::InvalidConfig(format!(
                        "ukf_full initialisation needs N = 2n (N = {ensemble_n}, n = {n})"
                    )));
                }
                InitScheme::UkfPlus | InitScheme::UkfMinus if ensemble_n != n => {
                    return Err(Error::InvalidConfig(format!(
                        "one-branch ukf initialisation needs N = n (N = {ensemble_n}, n = {n})"
                    )));
                }
                _ => {}
            }
            if !matches!(self.init_scheme, InitScheme::RandomPrior) {
                self.ukf.validate(n)?;
            }
        }
        if self.algorithms.contains(&Algorithm::Ukf) {
            self.ukf.validate(n)?;
        }

        let metrics = match &self.metrics {
            Some(list) if list.is_empty() => {
                return Err(Error::InvalidConfig("metrics list is empty".into()))
            }
            Some(list) => {
                let mut out = Vec::new();
                for m in list {
                    if out.contains(m) {
                        return Err(Error::InvalidConfig(format!("duplicate metric {m}")));
                    }
                    if m.needs_kf_reference() && !has_kf {
                        return Err(Error::InvalidConfig(format!(
                            "metric {m} needs the Kalman filter among the algorithms"
                        )));
                    }
                    out.push(*m);
                }
                out
            }
            None => {
                let mut out = vec![
                    MetricKind::RmseTrue,
                    MetricKind::LogDetVar,
                    MetricKind::Mahalanobis,
                ];
                if has_kf {
                    out.push(MetricKind::RmseKfMean);
                    out.push(MetricKind::RmseKfVar);
                }
                out
            }
        };

        let resolved = ResolvedConfig {
            config: ExperimentConfig {
                ensemble_n: Some(ensemble_n),
                metrics: Some(metrics),
                ..self.clone()
            },
        };
        Ok(resolved)
    }
}

/// A validated configuration with all defaults made explicit.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    config: ExperimentConfig,
}

impl ResolvedConfig {
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn ensemble_n(&self) -> usize {
        self.config.ensemble_n.expect("resolved")
    }

    pub fn metrics(&self) -> &[MetricKind] {
        self.config.metrics.as_deref().expect("resolved")
    }

    /// FNV-1a hash of the canonical JSON form, identifying the setup in
    /// result files.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(&self.config).expect("config serialises");
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in json.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

/// One output record: `(repeat, step, algorithm, metric) -> value`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub repeat: usize,
    pub step: usize,
    pub algorithm: Algorithm,
    pub metric: MetricKind,
    pub value: f64,
    pub diverged: bool,
}

/// A per-step posterior summary, or a divergence marker.
#[derive(Debug, Clone)]
enum StepEstimate {
    Ok {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    Diverged,
}

impl StepEstimate {
    fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        if mean.iter().all(|v| v.is_finite())
            && mean.amax() <= DIVERGENCE_NORM
            && cov.iter().all(|v| v.is_finite())
        {
            StepEstimate::Ok { mean, cov }
        } else {
            StepEstimate::Diverged
        }
    }
}

fn pad_diverged(estimates: &mut Vec<StepEstimate>, steps: usize) {
    while estimates.len() < steps {
        estimates.push(StepEstimate::Diverged);
    }
}

fn run_kf(model: &Model, traj: &Trajectory) -> Vec<StepEstimate> {
    let steps = traj.observations.len();
    let mut out = Vec::with_capacity(steps);
    let f = model.transition_matrix().expect("validated linear");
    let u = model.transition_cov();
    let h = model.observation_matrix();
    let v = model.observation_cov();
    let mut state = match KalmanState::new(model.init_mean(), model.init_cov()) {
        Ok(s) => s,
        Err(_) => {
            pad_diverged(&mut out, steps);
            return out;
        }
    };
    for y in &traj.observations {
        let predicted = kf_predict(&state, &f, &u);
        match kf_update(&predicted, y, &h, &v) {
            Ok(next) => {
                out.push(StepEstimate::from_parts(
                    next.mean.clone(),
                    next.covariance.clone(),
                ));
                state = next;
            }
            Err(_) => break,
        }
        if matches!(out.last(), Some(StepEstimate::Diverged)) {
            break;
        }
    }
    pad_diverged(&mut out, steps);
    out
}

fn run_ukf(model: &Model, traj: &Trajectory, cfg: &UkfConfig) -> Vec<StepEstimate> {
    let steps = traj.observations.len();
    let mut out = Vec::with_capacity(steps);
    let u = model.transition_cov();
    let h = model.observation_matrix();
    let v = model.observation_cov();
    let mut state = match KalmanState::new(model.init_mean(), model.init_cov()) {
        Ok(s) => s,
        Err(_) => {
            pad_diverged(&mut out, steps);
            return out;
        }
    };
    for y in &traj.observations {
        match ukf_step(&state, |x| model.transition(x), &u, y, &h, &v, cfg) {
            Ok(next) => {
                out.push(StepEstimate::from_parts(
                    next.mean.clone(),
                    next.covariance.clone(),
                ));
                state = next;
            }
            Err(_) => break,
        }
        if matches!(out.last(), Some(StepEstimate::Diverged)) {
            break;
        }
    }
    pad_diverged(&mut out, steps);
    out
}

fn run_prob_enkf(
    model: &Model,
    traj: &Trajectory,
    members: usize,
    square_root: bool,
    master_seed: u64,
    repeat: usize,
) -> Vec<StepEstimate> {
    let steps = traj.observations.len();
    let mut out = Vec::with_capacity(steps);
    let purpose = if square_root {
        StreamPurpose::SqrtEnkf
    } else {
        StreamPurpose::Stenkf
    };
    let mut rng = stream_rng(master_seed, repeat as u64, purpose);
    let u = model.transition_cov();
    let h = model.observation_matrix();
    let v = model.observation_cov();
    let mut ens = match ProbEnsemble::sample_from_prior(
        &model.init_mean(),
        &model.init_cov(),
        members,
        &mut rng,
    ) {
        Ok(e) => e,
        Err(_) => {
            pad_diverged(&mut out, steps);
            return out;
        }
    };
    for y in &traj.observations {
        let step = (|| -> Result<(ProbEnsemble, DVector<f64>, DMatrix<f64>)> {
            let (pred, mean, cov) = enkf_predict(&ens, |x| model.transition(x), &u, &mut rng)?;
            let updated = if square_root {
                sqrt_enkf_update(&pred, &mean, &cov, y, &h, &v)?
            } else {
                stenkf_update(&pred, &mean, &cov, y, &h, &v, &mut rng)?
            };
            let post_mean = updated.sample_mean();
            let post_cov = updated.sample_covariance();
            Ok((updated, post_mean, post_cov))
        })();
        match step {
            Ok((updated, post_mean, post_cov)) => {
                out.push(StepEstimate::from_parts(post_mean, post_cov));
                ens = updated;
            }
            Err(_) => break,
        }
        if matches!(out.last(), Some(StepEstimate::Diverged)) {
            break;
        }
    }
    pad_diverged(&mut out, steps);
    out
}

#[allow(clippy::too_many_arguments)]
fn run_penkf(
    model: &Model,
    traj: &Trajectory,
    sample_size: usize,
    scheme: InitScheme,
    ukf_cfg: &UkfConfig,
    pattern: &SparsityPattern,
    opts: &FitOptions,
    master_seed: u64,
    repeat: usize,
) -> Vec<StepEstimate> {
    let steps = traj.observations.len();
    let mut out = Vec::with_capacity(steps);
    let mut rng = stream_rng(master_seed, repeat as u64, StreamPurpose::PenkfInit);
    let u = model.transition_cov();
    let h = model.observation_matrix();
    let v = model.observation_cov();
    let prior = match GaussianPossibility::from_mean_cov(model.init_mean(), model.init_cov()) {
        Ok(p) => p,
        Err(_) => {
            pad_diverged(&mut out, steps);
            return out;
        }
    };
    let mut ens = match penkf_init(&prior, sample_size, scheme, ukf_cfg, &mut rng) {
        Ok(e) => e,
        Err(_) => {
            pad_diverged(&mut out, steps);
            return out;
        }
    };
    for y in &traj.observations {
        let step = (|| -> Result<(WeightedEnsemble, GaussianPossibility)> {
            let (pred_ens, predicted) =
                penkf_predict(&ens, |x| model.transition(x), &u, pattern, opts)?;
            penkf_update(&pred_ens, &predicted, y, &h, &v)
        })();
        match step {
            Ok((updated, posterior)) => {
                let cov = posterior
                    .covariance()
                    .cloned()
                    .unwrap_or_else(|| DMatrix::from_element(model.dim(), model.dim(), f64::NAN));
                out.push(StepEstimate::from_parts(posterior.mean().clone(), cov));
                ens = updated;
            }
            Err(_) => break,
        }
        if matches!(out.last(), Some(StepEstimate::Diverged)) {
            break;
        }
    }
    pad_diverged(&mut out, steps);
    out
}

fn metric_value(
    metric: MetricKind,
    estimate: &StepEstimate,
    truth: &DVector<f64>,
    kf_ref: Option<&StepEstimate>,
) -> (f64, bool) {
    let (mean, cov) = match estimate {
        StepEstimate::Ok { mean, cov } => (mean, cov),
        StepEstimate::Diverged => return (f64::INFINITY, true),
    };
    let value = match metric {
        MetricKind::RmseTrue => metrics::rmse(mean, truth),
        MetricKind::RmseKfMean | MetricKind::RmseKfVar => match kf_ref {
            Some(StepEstimate::Ok {
                mean: kf_mean,
                cov: kf_cov,
            }) => {
                if metric == MetricKind::RmseKfMean {
                    metrics::rmse(mean, kf_mean)
                } else {
                    metrics::rmse_mat(cov, kf_cov)
                }
            }
            _ => return (f64::INFINITY, true),
        },
        MetricKind::LogDetVar => metrics::log_det(cov),
        MetricKind::Mahalanobis => metrics::mahalanobis(truth, mean, cov),
    };
    match value {
        Ok(v) if v.is_finite() => (v, false),
        _ => (f64::INFINITY, true),
    }
}

fn run_single_repeat(resolved: &ResolvedConfig, repeat: usize) -> Vec<MetricRow> {
    let cfg = resolved.config();
    let model = &cfg.model;
    let steps = cfg.steps;
    let mut traj_rng = stream_rng(cfg.master_seed, repeat as u64, StreamPurpose::Trajectory);
    let traj = simulate_trajectory(model, steps, &mut traj_rng);

    let kf_estimates = if cfg.algorithms.contains(&Algorithm::Kf) {
        Some(run_kf(model, &traj))
    } else {
        None
    };

    let mut rows = Vec::new();
    for alg in &cfg.algorithms {
        let estimates = match alg {
            Algorithm::Kf => kf_estimates.clone().expect("kf requested"),
            Algorithm::Ukf => run_ukf(model, &traj, &cfg.ukf),
            Algorithm::Stenkf => run_prob_enkf(
                model,
                &traj,
                resolved.ensemble_n() + 1,
                false,
                cfg.master_seed,
                repeat,
            ),
            Algorithm::Sqrtenkf => run_prob_enkf(
                model,
                &traj,
                resolved.ensemble_n() + 1,
                true,
                cfg.master_seed,
                repeat,
            ),
            Algorithm::Penkf => run_penkf(
                model,
                &traj,
                resolved.ensemble_n(),
                cfg.init_scheme,
                &cfg.ukf,
                &cfg.localisation,
                &cfg.solver,
                cfg.master_seed,
                repeat,
            ),
        };
        for (idx, estimate) in estimates.iter().enumerate() {
            let step = idx + 1;
            let truth = &traj.states[step];
            let kf_ref = kf_estimates.as_ref().map(|k| &k[idx]);
            for metric in resolved.metrics() {
                let (value, diverged) = metric_value(*metric, estimate, truth, kf_ref);
                rows.push(MetricRow {
                    repeat,
                    step,
                    algorithm: *alg,
                    metric: *metric,
                    value,
                    diverged,
                });
            }
        }
    }
    rows
}

fn sort_rows(rows: &mut [MetricRow]) {
    rows.sort_by(|a, b| {
        (a.repeat, a.step, a.algorithm.as_str(), a.metric.as_str()).cmp(&(
            b.repeat,
            b.step,
            b.algorithm.as_str(),
            b.metric.as_str(),
        ))
    });
}

/// Runs all repeats (optionally in parallel) and returns the sorted rows.
/// `threads = 0` uses the available parallelism; the output is identical
/// for every thread count.
pub fn run_experiment_rows(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<MetricRow>> {
    let resolved = cfg.resolve()?;
    let repeats = resolved.config().repeats;
    let workers = effective_workers(threads, repeats);

    let mut rows = Vec::new();
    if workers <= 1 {
        for repeat in 0..repeats {
            rows.extend(run_single_repeat(&resolved, repeat));
        }
    } else {
        let buckets: Mutex<Vec<Option<Vec<MetricRow>>>> = Mutex::new(vec![None; repeats]);
        std::thread::scope(|scope| {
            for w in 0..workers {
                let resolved = &resolved;
                let buckets = &buckets;
                scope.spawn(move || {
                    let mut local: Vec<(usize, Vec<MetricRow>)> = Vec::new();
                    let mut repeat = w;
                    while repeat < repeats {
                        local.push((repeat, run_single_repeat(resolved, repeat)));
                        repeat += workers;
                    }
                    let mut guard = buckets.lock().expect("no panics while holding the lock");
                    for (r, rws) in local {
                        guard[r] = Some(rws);
                    }
                });
            }
        });
        for bucket in buckets.into_inner().expect("scope joined") {
            rows.extend(bucket.expect("every repeat ran"));
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

fn effective_workers(threads: usize, tasks: usize) -> usize {
    let hw = || {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    };
    let t = if threads == 0 { hw() } else { threads };
    t.clamp(1, tasks.max(1))
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v}")
    }
}

/// Renders rows as CSV with the schema
/// `repeat,step,algorithm,metric,value,diverged`.
pub fn render_experiment_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("repeat,step,algorithm,metric,value,diverged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.repeat,
            r.step,
            r.algorithm,
            r.metric,
            format_value(r.value),
            r.diverged
        ));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn sidecar_path(out: &Path) -> std::path::PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

/// Runs the experiment and writes the CSV plus a JSON sidecar holding the
/// resolved configuration, seed, and config hash.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize, out: &Path) -> Result<()> {
    let resolved = cfg.resolve()?;
    let rows = run_experiment_rows(cfg, threads)?;
    write_file(out, &render_experiment_csv(&rows))?;
    let sidecar = serde_json::json!({
        "config": resolved.config(),
        "master_seed": resolved.config().master_seed,
        "config_hash": resolved.config_hash(),
    });
    write_file(
        &sidecar_path(out),
        &format!("{}\n", serde_json::to_string_pretty(&sidecar)?),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Variance-recovery study
// ---------------------------------------------------------------------------

/// Parameters of the covariance-recovery comparison between the sample
/// covariance and the fitted possibilistic covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceRecoveryConfig {
    pub dim: usize,
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
}

/// One row of the study: a method's recovery error for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRecoveryRow {
    pub dim: usize,
    pub sample_size: usize,
    pub trial: usize,
    pub method: &'static str,
    pub frobenius_rmse: f64,
    pub elapsed_ms: f64,
}

impl VarianceRecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        if self.trials == 0 || self.sample_sizes.is_empty() {
            return Err(Error::InvalidConfig(
                "need at least one trial and one sample size".into(),
            ));
        }
        if self.sample_sizes.iter().any(|&s| s < self.dim) {
            return Err(Error::InvalidConfig(format!(
                "sample sizes must be at least the dimension {}",
                self.dim
            )));
        }
        Ok(())
    }
}

fn variance_recovery_trial(
    cfg: &VarianceRecoveryConfig,
    size_index: usize,
    trial: usize,
) -> Result<Vec<VarianceRecoveryRow>> {
    let n = cfg.dim;
    let sample_size = cfg.sample_sizes[size_index];
    let stream = (size_index * cfg.trials + trial) as u64;
    let mut rng = stream_rng(cfg.master_seed, stream, StreamPurpose::VarianceRecovery);

    // True covariance from an inverse-Wishart with n² dof and scale n·I.
    let scale = DMatrix::identity(n, n) * n as f64;
    let sigma_true = sample_inverse_wishart(n, (n * n) as f64, &scale, &mut rng)?;
    let l_true = linalg::chol_lower(&sigma_true)?;
    let lam_true = linalg::inv_spd(&sigma_true)?;

    let zero = DVector::zeros(n);
    let draws: Vec<DVector<f64>> = (0..sample_size)
        .map(|_| sample_mvn_chol(&zero, &l_true, &mut rng))
        .collect();

    // Probabilistic estimate: the sample covariance.
    let started = Instant::now();
    let mut sample_mean = DVector::zeros(n);
    for x in &draws {
        sample_mean += x;
    }
    sample_mean /= sample_size as f64;
    let mut sample_cov = DMatrix::<f64>::zeros(n, n);
    for x in &draws {
        let d = x - &sample_mean;
        sample_cov += &d * d.transpose();
    }
    sample_cov /= (sample_size.max(2) - 1) as f64;
    let prob_ms = started.elapsed().as_secs_f64() * 1e3;
    let prob_rmse = metrics::rmse_mat(&sample_cov, &sigma_true)?;

    // Possibilistic estimate: weights from the true possibility function,
    // mode pinned at the origin, determinant-maximizing fit.
    let weighted: Vec<(f64, DVector<f64>)> = draws
        .iter()
        .map(|x| ((-0.5 * (&lam_true * x).dot(x)).exp(), x.clone()))
        .collect();
    let ens = WeightedEnsemble::new(zero, weighted)?;
    let started = Instant::now();
    let fit = fit_precision_with(&ens, &SparsityPattern::Full, &FitOptions::default())?;
    let fitted_cov = linalg::inv_spd(fit.precision())?;
    let poss_ms = started.elapsed().as_secs_f64() * 1e3;
    let poss_rmse = metrics::rmse_mat(&fitted_cov, &sigma_true)?;

    Ok(vec![
        VarianceRecoveryRow {
            dim: n,
            sample_size,
            trial,
            method: "probabilistic",
            frobenius_rmse: prob_rmse,
            elapsed_ms: prob_ms,
        },
        VarianceRecoveryRow {
            dim: n,
            sample_size,
            trial,
            method: "possibilistic",
            frobenius_rmse: poss_rmse,
            elapsed_ms: poss_ms,
        },
    ])
}

/// Runs the variance-recovery study and returns rows sorted by
/// `(sample_size index, trial, method)`.
pub fn run_variance_recovery_rows(
    cfg: &VarianceRecoveryConfig,
    threads: usize,
) -> Result<Vec<VarianceRecoveryRow>> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.sample_sizes.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let workers = effective_workers(threads, tasks.len());

    let mut rows = Vec::with_capacity(tasks.len() * 2);
    if workers <= 1 {
        for &(s, t) in &tasks {
            rows.extend(variance_recovery_trial(cfg, s, t)?);
        }
    } else {
        let buckets: Mutex<Vec<Option<Result<Vec<VarianceRecoveryRow>>>>> =
            Mutex::new((0..tasks.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for w in 0..workers {
                let buckets = &buckets;
                let tasks = &tasks;
                scope.spawn(move || {
                    let mut idx = w;
                    while idx < tasks.len() {
                        let (s, t) = tasks[idx];
                        let result = variance_recovery_trial(cfg, s, t);
                        buckets
                            .lock()
                            .expect("no panics while holding the lock")[idx] = Some(result);
                        idx += workers;
                    }
                });
            }
        });
        for bucket in buckets.into_inner().expect("scope joined") {
            rows.extend(bucket.expect("every task ran")?);
        }
    }
    rows.sort_by(|a, b| {
        (a.sample_size, a.trial, a.method).cmp(&(b.sample_size, b.trial, b.method))
    });
    Ok(rows)
}

/// Renders variance-recovery rows as CSV with the schema
/// `dim,sample_size,trial,method,frobenius_rmse,elapsed_ms`.
pub fn render_variance_csv(rows: &[VarianceRecoveryRow]) -> String {
    let mut out = String::from("dim,sample_size,trial,method,frobenius_rmse,elapsed_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.dim,
            r.sample_size,
            r.trial,
            r.method,
            format_value(r.frobenius_rmse),
            format_value(r.elapsed_ms)
        ));
    }
    out
}

/// Runs the study and writes the CSV plus its JSON sidecar.
///
/// Note the timing column reflects wall-clock time, so only the CSV body
/// minus that column is reproducible bit-for-bit; the error columns are.
pub fn run_variance_recovery(
    cfg: &VarianceRecoveryConfig,
    threads: usize,
    out: &Path,
) -> Result<()> {
    let rows = run_variance_recovery_rows(cfg, threads)?;
    write_file(out, &render_variance_csv(&rows))?;
    let sidecar = serde_json::json!({
        "config": cfg,
        "master_seed": cfg.master_seed,
    });
    write_file(
        &sidecar_path(out),
        &format!("{}\n", serde_json::to_string_pretty(&sidecar)?),
    )?;
    Ok(())
}
