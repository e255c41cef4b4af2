//! Performance metrics and aggregation across repeats.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Estimates whose magnitude passes this are flagged as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Root mean squared componentwise difference.
pub fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "rmse over vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum_sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum_sq / a.len() as f64).sqrt())
}

/// RMSE between matrices, elementwise over the flattened entries (used for
/// variance-versus-variance comparisons).
pub fn rmse_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "rmse over matrices {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let sum_sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum_sq / a.len() as f64).sqrt())
}

/// Mahalanobis distance `sqrt((x-μ)ᵀ Σ⁻¹ (x-μ))`, via a Cholesky solve.
pub fn mahalanobis(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mu.len() || sigma.nrows() != x.len() || sigma.ncols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "mahalanobis: x len {}, mu len {}, sigma {}x{}",
            x.len(),
            mu.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let l = linalg::chol_lower(sigma)?;
    let d = x - mu;
    let z = l
        .solve_lower_triangular(&d)
        .ok_or(Error::NotPositiveDefinite)?;
    Ok(z.norm())
}

/// `log |Σ|` as twice the log-diagonal sum of the Cholesky factor.
pub fn log_det(sigma: &DMatrix<f64>) -> Result<f64> {
    linalg::log_det_spd(sigma)
}

/// Per-step values of one metric for one algorithm in one repeat.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSeries {
    pub algorithm: String,
    pub metric: String,
    pub values: Vec<f64>,
    pub repeat: usize,
    pub config_hash: String,
    /// Set when the filter diverged; diverged steps hold the infinite
    /// sentinel rather than NaN.
    pub diverged: bool,
}

/// Per-step summary across repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub step: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Percentile with linear interpolation between order statistics; `values`
/// must be sorted.
fn percentile_sorted(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    if values.len() == 1 {
        return values[0];
    }
    let idx = p * (values.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        let frac = idx - lo as f64;
        values[lo] + frac * (values[hi] - values[lo])
    }
}

/// Aggregates repeats of one `(algorithm, metric)` pair into per-step mean,
/// median, and quartiles. Infinite values from diverged repeats make the
/// mean infinite but leave the median finite while fewer than half the
/// repeats diverged.
pub fn aggregate(series: &[MetricSeries]) -> Result<Vec<AggregateRow>> {
    let first = series.first().ok_or_else(|| {
        Error::InvalidConfig("aggregate needs at least one series".into())
    })?;
    for s in series {
        if s.algorithm != first.algorithm || s.metric != first.metric {
            return Err(Error::InvalidConfig(format!(
                "aggregate mixes ({}, {}) with ({}, {})",
                first.algorithm, first.metric, s.algorithm, s.metric
            )));
        }
        if s.values.len() != first.values.len() {
            return Err(Error::DimensionMismatch(
                "aggregate needs series of equal length".into(),
            ));
        }
    }
    let steps = first.values.len();
    let mut rows = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut vals: Vec<f64> = series.iter().map(|s| s.values[step]).collect();
        vals.sort_by(f64::total_cmp);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        rows.push(AggregateRow {
            step,
            mean,
            median: percentile_sorted(&vals, 0.5),
            q25: percentile_sorted(&vals, 0.25),
            q75: percentile_sorted(&vals, 0.75),
        });
    }
    Ok(rows)
}
