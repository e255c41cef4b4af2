//! Best-fitting Gaussian possibility function for a weighted ensemble.
//!
//! The fitted Gaussian is the one of minimal epistemic uncertainty that does
//! not introduce artificial information: its expected value is the mode
//! particle, and its precision matrix solves
//!
//! ```text
//! maximize  log |Λ|
//! subject to  dᵢᵀ Λ dᵢ ≤ -2 log wᵢ   (i = 1..N,  dᵢ = xᵢ - x₀)
//!             Λ ⪰ 0,   Λᵢⱼ = 0 on the sparsity pattern's zero set
//! ```
//!
//! solved here with a primal log-barrier interior-point method. Structural
//! zeros in the precision encode conditional independence (localisation);
//! the optimizer then loses determinant, which acts as an automatic,
//! tuning-free form of inflation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::possibility::{GaussianPossibility, WeightedEnsemble};

/// Structural zero pattern imposed on the precision matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsityPattern {
    /// No structural zeros.
    Full,
    /// `Λᵢⱼ = 0` whenever `|i - j| >= bandwidth`; bandwidth 1 keeps only the
    /// diagonal, bandwidth 2 keeps the diagonal and its neighbours.
    Banded { bandwidth: usize },
    /// An explicit, symmetric set of zeroed off-diagonal index pairs.
    Explicit { zeros: Vec<(usize, usize)> },
}

impl SparsityPattern {
    /// An explicit pattern from off-diagonal pairs; each pair also zeroes its
    /// transpose. Diagonal pairs are rejected.
    pub fn explicit(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut zeros: Vec<(usize, usize)> = Vec::new();
        for (i, j) in pairs {
            if i == j {
                return Err(Error::InvalidConfig(format!(
                    "sparsity pattern cannot zero the diagonal entry ({i}, {j})"
                )));
            }
            let p = (i.min(j), i.max(j));
            if !zeros.contains(&p) {
                zeros.push(p);
            }
        }
        zeros.sort_unstable();
        Ok(SparsityPattern::Explicit { zeros })
    }

    /// Validates invariants that `serde` cannot enforce.
    pub fn validate(&self) -> Result<()> {
        match self {
            SparsityPattern::Full => Ok(()),
            SparsityPattern::Banded { bandwidth } => {
                if *bandwidth == 0 {
                    Err(Error::InvalidConfig(
                        "banded pattern needs bandwidth >= 1".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            SparsityPattern::Explicit { zeros } => {
                if zeros.iter().any(|&(i, j)| i == j) {
                    Err(Error::InvalidConfig(
                        "explicit pattern cannot zero diagonal entries".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Whether entry `(i, j)` is a structural zero.
    pub fn is_zero(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        match self {
            SparsityPattern::Full => false,
            SparsityPattern::Banded { bandwidth } => i.abs_diff(j) >= *bandwidth,
            SparsityPattern::Explicit { zeros } => {
                let p = (i.min(j), i.max(j));
                zeros.contains(&p)
            }
        }
    }

    /// The free upper-triangle entries `(i, j)` with `i <= j` for dimension `n`.
    pub fn free_entries(&self, n: usize) -> Vec<(usize, usize)> {
        let mut free = Vec::new();
        for i in 0..n {
            for j in i..n {
                if !self.is_zero(i, j) {
                    free.push((i, j));
                }
            }
        }
        free
    }
}

/// Interior-point solver parameters. The defaults are chosen so that the
/// affine-invariance and filter-equivalence checks hold at `1e-5` relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Multiplicative barrier schedule `t <- barrier_multiplier * t`.
    pub barrier_multiplier: f64,
    /// Starting barrier stage.
    pub initial_t: f64,
    /// Stop once the duality-gap bound `N / t` falls below this.
    pub gap_tol: f64,
    /// Newton decrement threshold per stage.
    pub newton_tol: f64,
    /// Per-stage Newton iteration cap.
    pub max_newton_per_stage: usize,
    /// Entries of `Λ` beyond this magnitude mean the problem is unbounded.
    pub divergence_threshold: f64,
    /// Allowed constraint violation when checking feasibility of a result.
    pub feasibility_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            barrier_multiplier: 10.0,
            initial_t: 1.0,
            gap_tol: 1e-9,
            newton_tol: 1e-10,
            max_newton_per_stage: 200,
            divergence_threshold: 1e12,
            feasibility_tol: 1e-8,
        }
    }
}

/// Constraint data of the fit problem: deviations from the mode (the
/// rank-one constraint matrices are never formed densely), log-weight
/// bounds, the sparsity pattern, and the dimension.
#[derive(Debug, Clone)]
pub struct PrecisionFitProblem {
    deviations: Vec<DVector<f64>>,
    bounds: Vec<f64>,
    pattern: SparsityPattern,
    dim: usize,
}

impl PrecisionFitProblem {
    /// Extracts constraint data from an ensemble: `dᵢ = xᵢ - x₀` and
    /// `bᵢ = -2 log wᵢ` for each non-mode particle.
    pub fn from_ensemble(ens: &WeightedEnsemble, pattern: SparsityPattern) -> Result<Self> {
        pattern.validate()?;
        if ens.sample_size() < 1 {
            return Err(Error::InvalidEnsemble(
                "the fit needs at least one non-mode particle".into(),
            ));
        }
        let mode = ens.mode();
        let mut deviations = Vec::with_capacity(ens.sample_size());
        let mut bounds = Vec::with_capacity(ens.sample_size());
        for i in 1..=ens.sample_size() {
            deviations.push(&ens.particles()[i] - mode);
            bounds.push(-2.0 * ens.weights()[i].ln());
        }
        Ok(Self {
            deviations,
            bounds,
            pattern,
            dim: ens.dim(),
        })
    }

    pub fn deviations(&self) -> &[DVector<f64>] {
        &self.deviations
    }

    /// The bounds `bᵢ = -2 log wᵢ`, all strictly positive.
    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves the determinant-maximization problem.
    pub fn solve(&self, opts: &FitOptions) -> Result<FitResult> {
        // Under the full pattern, deviations that do not span the space leave
        // some direction of the precision unconstrained.
        if matches!(self.pattern, SparsityPattern::Full) {
            let dev_mat = DMatrix::from_columns(&self.deviations.iter().cloned().collect::<Vec<_>>());
            if linalg::rank(&dev_mat, 1e-12) < self.dim {
                return Err(Error::UnboundedProblem);
            }
        }
        let active: Vec<usize> = (0..self.deviations.len())
            .filter(|&i| self.deviations[i].norm_squared() > 0.0)
            .collect();
        if active.is_empty() {
            return Err(Error::UnboundedProblem);
        }

        let solver = BarrierSolver::new(self, &active);
        let (x, iterations, barrier_final) = solver.run(opts)?;
        let precision = solver.assemble(&x);

        let slacks = self
            .deviations
            .iter()
            .zip(&self.bounds)
            .map(|(d, &b)| b - (&precision * d).dot(d))
            .collect();
        Ok(FitResult {
            precision,
            slacks,
            iterations,
            barrier_final,
        })
    }
}

/// The solved precision matrix with per-constraint slacks and solver
/// statistics.
#[derive(Debug, Clone)]
pub struct FitResult {
    precision: DMatrix<f64>,
    slacks: Vec<f64>,
    iterations: usize,
    barrier_final: f64,
}

impl FitResult {
    /// The optimal precision matrix; pattern zeros are structural (exact).
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Per-particle gaps `bᵢ - dᵢᵀ Λ* dᵢ`, one per non-mode particle.
    pub fn slacks(&self) -> &[f64] {
        &self.slacks
    }

    /// Total Newton iterations across all barrier stages.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// The final barrier stage `t`.
    pub fn barrier_final(&self) -> f64 {
        self.barrier_final
    }
}

/// Fits the precision matrix to a weighted ensemble with default options.
pub fn fit_precision(ens: &WeightedEnsemble, pattern: &SparsityPattern) -> Result<FitResult> {
    fit_precision_with(ens, pattern, &FitOptions::default())
}

/// Fits the precision matrix with explicit solver options.
pub fn fit_precision_with(
    ens: &WeightedEnsemble,
    pattern: &SparsityPattern,
    opts: &FitOptions,
) -> Result<FitResult> {
    PrecisionFitProblem::from_ensemble(ens, pattern.clone())?.solve(opts)
}

/// Closed-form one-dimensional fit: the tightest feasible precision is
/// `Λ = min over i of -2 log wᵢ / (xᵢ - μ)²`, no iteration needed. When the
/// weights come from evaluating a Gaussian possibility function, every
/// candidate equals its precision and the variance is recovered exactly,
/// even from a single particle.
pub fn fit_precision_1d(ens: &WeightedEnsemble) -> Result<f64> {
    if ens.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "fit_precision_1d expects dimension 1, got {}",
            ens.dim()
        )));
    }
    let mode = ens.mode()[0];
    let mut best: Option<f64> = None;
    for i in 1..=ens.sample_size() {
        let d = ens.particles()[i][0] - mode;
        if d == 0.0 {
            continue;
        }
        let b = -2.0 * ens.weights()[i].ln();
        let candidate = b / (d * d);
        best = Some(best.map_or(candidate, |cur: f64| cur.min(candidate)));
    }
    best.ok_or(Error::UnboundedProblem)
}

/// The best-fitting Gaussian possibility function of an ensemble: expected
/// value at the mode particle, precision from the fit, covariance by
/// inversion.
pub fn gaussian_from_ensemble(
    ens: &WeightedEnsemble,
    pattern: &SparsityPattern,
) -> Result<GaussianPossibility> {
    gaussian_from_ensemble_with(ens, pattern, &FitOptions::default())
}

/// As [`gaussian_from_ensemble`] with explicit solver options.
pub fn gaussian_from_ensemble_with(
    ens: &WeightedEnsemble,
    pattern: &SparsityPattern,
    opts: &FitOptions,
) -> Result<GaussianPossibility> {
    let fit = fit_precision_with(ens, pattern, opts)?;
    let covariance = match linalg::chol_lower(fit.precision()) {
        Ok(l) => {
            let n = ens.dim();
            let mut cov = linalg::solve_with_chol(&l, &DMatrix::identity(n, n))?;
            linalg::symmetrize(&mut cov);
            Some(cov)
        }
        Err(_) => None,
    };
    Ok(GaussianPossibility::from_parts_unchecked(
        ens.mode().clone(),
        fit.precision().clone(),
        covariance,
    ))
}

/// Per-particle non-Gaussianity gaps `bᵢ - dᵢᵀ Λ dᵢ`, recomputed from the
/// ensemble so the result stays honest even if the fit was produced with
/// different options. Larger gaps mean the Gaussian envelope is slack at
/// that particle.
pub fn nongaussianity_gaps(ens: &WeightedEnsemble, fit: &FitResult) -> Result<Vec<f64>> {
    if fit.precision().nrows() != ens.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fit has dimension {}, ensemble has {}",
            fit.precision().nrows(),
            ens.dim()
        )));
    }
    let mode = ens.mode();
    Ok((1..=ens.sample_size())
        .map(|i| {
            let d = &ens.particles()[i] - mode;
            let b = -2.0 * ens.weights()[i].ln();
            b - (fit.precision() * &d).dot(&d)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Interior-point machinery
// ---------------------------------------------------------------------------

struct BarrierSolver {
    free: Vec<(usize, usize)>,
    /// Column `i` holds the gradient of `dᵢᵀ Λ dᵢ` in free-entry coordinates.
    q: DMatrix<f64>,
    bounds: Vec<f64>,
    dim: usize,
}

impl BarrierSolver {
    fn new(problem: &PrecisionFitProblem, active: &[usize]) -> Self {
        let free = problem.pattern.free_entries(problem.dim);
        let p = free.len();
        let nc = active.len();
        let mut q = DMatrix::<f64>::zeros(p, nc);
        for (col, &ci) in active.iter().enumerate() {
            let d = &problem.deviations[ci];
            for (row, &(i, j)) in free.iter().enumerate() {
                q[(row, col)] = if i == j { d[i] * d[i] } else { 2.0 * d[i] * d[j] };
            }
        }
        Self {
            free,
            q,
            bounds: active.iter().map(|&i| problem.bounds[i]).collect(),
            dim: problem.dim,
        }
    }

    fn assemble(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut lam = DMatrix::<f64>::zeros(self.dim, self.dim);
        for (a, &(i, j)) in self.free.iter().enumerate() {
            lam[(i, j)] = x[a];
            lam[(j, i)] = x[a];
        }
        lam
    }

    fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.q.transpose() * x;
        DVector::from_iterator(
            self.bounds.len(),
            self.bounds.iter().zip(r.iter()).map(|(&b, &ri)| b - ri),
        )
    }

    /// `log det Λ(x)` when strictly feasible, `None` otherwise.
    fn barrier_value(&self, x: &DVector<f64>, inv_t: f64) -> Option<f64> {
        let lam = self.assemble(x);
        let l = linalg::chol_lower(&lam).ok()?;
        let logdet = 2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>();
        let s = self.slacks(x);
        if s.iter().any(|&si| si <= 0.0) {
            return None;
        }
        Some(logdet + inv_t * s.iter().map(|si| si.ln()).sum::<f64>())
    }

    fn run(&self, opts: &FitOptions) -> Result<(DVector<f64>, usize, f64)> {
        let p = self.free.len();
        let nc = self.bounds.len() as f64;

        // Strictly feasible start: Λ0 = (c / n) I with
        // c = 0.5 min_i bᵢ / |dᵢ|², projected onto the pattern (diagonal
        // entries are always free).
        let mut c = f64::INFINITY;
        for (col, &b) in self.bounds.iter().enumerate() {
            let norm_sq: f64 = {
                // |dᵢ|² equals the sum of the diagonal components of qᵢ.
                self.free
                    .iter()
                    .enumerate()
                    .filter(|(_, &(i, j))| i == j)
                    .map(|(row, _)| self.q[(row, col)])
                    .sum()
            };
            if norm_sq > 0.0 {
                c = c.min(b / norm_sq);
            }
        }
        let init = 0.5 * c / self.dim as f64;
        let mut x = DVector::<f64>::zeros(p);
        for (a, &(i, j)) in self.free.iter().enumerate() {
            if i == j {
                x[a] = init;
            }
        }

        let mut t = opts.initial_t;
        let mut iterations = 0usize;
        loop {
            self.newton_stage(&mut x, t, opts, &mut iterations)?;
            if nc / t < opts.gap_tol {
                return Ok((x, iterations, t));
            }
            t *= opts.barrier_multiplier;
        }
    }

    fn newton_stage(
        &self,
        x: &mut DVector<f64>,
        t: f64,
        opts: &FitOptions,
        iterations: &mut usize,
    ) -> Result<()> {
        let p = self.free.len();
        let inv_t = 1.0 / t;
        for _ in 0..opts.max_newton_per_stage {
            let lam = self.assemble(x);
            if lam.diagonal().amax() > opts.divergence_threshold {
                return Err(Error::UnboundedProblem);
            }
            let l = linalg::chol_lower(&lam).map_err(|_| Error::MaxIterations)?;
            let mut s_inv = linalg::solve_with_chol(&l, &DMatrix::identity(self.dim, self.dim))?;
            linalg::symmetrize(&mut s_inv);
            let slacks = self.slacks(x);

            // Gradient of  log det Λ + (1/t) Σ log sᵢ.
            let mut grad = DVector::<f64>::zeros(p);
            for (a, &(i, j)) in self.free.iter().enumerate() {
                grad[a] = if i == j { s_inv[(i, i)] } else { 2.0 * s_inv[(i, j)] };
            }
            for (col, &si) in slacks.iter().enumerate() {
                let w = inv_t / si;
                for a in 0..p {
                    grad[a] -= w * self.q[(a, col)];
                }
            }

            // Negated Hessian: Gram of log det plus barrier rank-one terms.
            let mut h = DMatrix::<f64>::zeros(p, p);
            for (a, &(i, j)) in self.free.iter().enumerate() {
                for (b, &(k, l2)) in self.free.iter().enumerate().skip(a) {
                    let val = if i == j && k == l2 {
                        s_inv[(i, k)] * s_inv[(i, k)]
                    } else if i == j {
                        2.0 * s_inv[(i, k)] * s_inv[(i, l2)]
                    } else if k == l2 {
                        2.0 * s_inv[(i, k)] * s_inv[(j, k)]
                    } else {
                        2.0 * (s_inv[(i, k)] * s_inv[(j, l2)] + s_inv[(i, l2)] * s_inv[(j, k)])
                    };
                    h[(a, b)] = val;
                    h[(b, a)] = val;
                }
            }
            for (col, &si) in slacks.iter().enumerate() {
                let w = inv_t / (si * si);
                for a in 0..p {
                    let qa = self.q[(a, col)];
                    if qa == 0.0 {
                        continue;
                    }
                    for b in a..p {
                        let add = w * qa * self.q[(b, col)];
                        h[(a, b)] += add;
                        if a != b {
                            h[(b, a)] += add;
                        }
                    }
                }
            }

            let delta = solve_newton_system(&h, &grad)?;
            let dec_sq = grad.dot(&delta);
            *iterations += 1;

            // A Newton increment below the representable resolution of the
            // objective cannot be realised in f64; treat it as converged.
            let phi0 = self
                .barrier_value(x, inv_t)
                .ok_or(Error::MaxIterations)?;
            let float_floor = 64.0 * f64::EPSILON * (1.0 + phi0.abs());
            if dec_sq <= (opts.newton_tol * opts.newton_tol).max(float_floor) {
                return Ok(());
            }

            // Backtracking line search keeping Λ ≻ 0 and all slacks > 0;
            // a step must improve the objective measurably, not just pass
            // a sub-resolution Armijo bound.
            let mut alpha = 1.0;
            let mut stepped = false;
            while alpha >= 1e-20 {
                let trial = &*x + alpha * &delta;
                if let Some(phi) = self.barrier_value(&trial, inv_t) {
                    if phi >= phi0 + 0.01 * alpha * dec_sq && phi > phi0 {
                        *x = trial;
                        stepped = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !stepped {
                // No representable step improves this stage's objective: we
                // are at its numerical optimum. Accept unless the decrement
                // says we are still far away.
                if dec_sq <= 1e-8 * (1.0 + phi0.abs()) {
                    return Ok(());
                }
                return Err(Error::MaxIterations);
            }
        }
        Err(Error::MaxIterations)
    }
}

/// Solves `H Δ = g` for the positive-definite Newton system. The system is
/// Jacobi-scaled first (its eigenvalue spread grows with the barrier stage),
/// and a growing ridge catches the rare case where round-off still spoils
/// definiteness.
fn solve_newton_system(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let p = h.nrows();
    let scale = DVector::<f64>::from_iterator(
        p,
        (0..p).map(|i| 1.0 / h[(i, i)].max(f64::MIN_POSITIVE).sqrt()),
    );
    let mut hs = DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            hs[(a, b)] = h[(a, b)] * scale[a] * scale[b];
        }
    }
    let gs = DVector::<f64>::from_iterator(p, (0..p).map(|a| g[a] * scale[a]));

    let mut ridge = 0.0;
    for _ in 0..10 {
        let mut hr = hs.clone();
        for i in 0..p {
            hr[(i, i)] += ridge;
        }
        if let Ok(l) = linalg::chol_lower(&hr) {
            let ys = linalg::solve_spd_vec(&l, &gs)?;
            return Ok(DVector::from_iterator(p, (0..p).map(|a| ys[a] * scale[a])));
        }
        ridge = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
    }
    Err(Error::MaxIterations)
}
