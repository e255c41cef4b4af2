//! Gaussian possibility functions, weighted ensembles, and affine transports.
//!
//! A Gaussian possibility function `N̄(μ, Σ)` is `exp(-½ (x-μ)ᵀ Λ (x-μ))`
//! with `Λ = Σ⁻¹`: it peaks at exactly 1 at its expected value `μ` and, in
//! contrast to a density, remains well defined when `Λ` is only positive
//! semi-definite. `Λ = 0` describes total ignorance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Weights equal to one are reserved for the mode; anything sampled at or
/// above one is clamped just below so its fit constraint stays active.
pub const WEIGHT_CLAMP: f64 = 1.0 - 1e-12;

/// A Gaussian possibility function parameterised by its expected value and
/// precision matrix, with the covariance cached when the precision is
/// invertible.
#[derive(Debug, Clone)]
pub struct GaussianPossibility {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    covariance: Option<DMatrix<f64>>,
}

impl GaussianPossibility {
    /// Builds from an expected value and a positive-definite covariance.
    pub fn from_mean_cov(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {n} but covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if !linalg::is_symmetric(&covariance, linalg::SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        let covariance = linalg::symmetric_part(&covariance);
        let precision = linalg::inv_spd(&covariance)?;
        Ok(Self {
            mean,
            precision,
            covariance: Some(covariance),
        })
    }

    /// Builds from an expected value and a positive semi-definite precision.
    ///
    /// Eigenvalues below `-1e-10` relative to the spectral radius are
    /// rejected; smaller negative ones (round-off) are clipped to zero. The
    /// covariance is cached only when the precision is invertible.
    pub fn from_mean_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if precision.nrows() != n || precision.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {n} but precision is {}x{}",
                precision.nrows(),
                precision.ncols()
            )));
        }
        if !linalg::is_symmetric(&precision, linalg::SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        let sym = linalg::symmetric_part(&precision);
        let eig = sym.clone().symmetric_eigen();
        let max_abs = eig.eigenvalues.amax();
        let mut clipped = sym;
        if max_abs > 0.0 {
            let min_eig = eig.eigenvalues.min();
            if min_eig < -1e-10 * max_abs {
                return Err(Error::NotPositiveSemidefinite);
            }
            if min_eig < 0.0 {
                let mut vals = eig.eigenvalues.clone();
                vals.iter_mut().for_each(|v| *v = v.max(0.0));
                clipped = &eig.eigenvectors
                    * DMatrix::from_diagonal(&vals)
                    * eig.eigenvectors.transpose();
                linalg::symmetrize(&mut clipped);
            }
        }
        let covariance = linalg::chol_lower(&clipped)
            .ok()
            .map(|l| {
                linalg::solve_with_chol(&l, &DMatrix::identity(n, n)).map(|mut inv| {
                    linalg::symmetrize(&mut inv);
                    inv
                })
            })
            .transpose()?;
        Ok(Self {
            mean,
            precision: clipped,
            covariance,
        })
    }

    /// The possibility function equal to one everywhere (`Λ = 0`).
    pub fn uninformative(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            precision: DMatrix::zeros(dim, dim),
            covariance: None,
        }
    }

    /// Internal constructor for matrices already known to be consistent.
    pub(crate) fn from_parts_unchecked(
        mean: DVector<f64>,
        precision: DMatrix<f64>,
        covariance: Option<DMatrix<f64>>,
    ) -> Self {
        debug_assert!(linalg::is_symmetric(&precision, 1e-8));
        Self {
            mean,
            precision,
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// The covariance, when the precision is invertible.
    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.as_ref()
    }

    /// Evaluates the possibility function at `x`; the result lies in `(0, 1]`
    /// and equals one exactly when `x - μ` is in the null space of `Λ`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected a vector of length {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        let d = x - &self.mean;
        let q = (&self.precision * &d).dot(&d).max(0.0);
        Ok((-0.5 * q).exp())
    }

    /// The epistemic uncertainty `√|2πΣ|`, infinite when the possibility
    /// function does not decay in some direction.
    pub fn epistemic_uncertainty(&self) -> f64 {
        match &self.covariance {
            Some(cov) => match linalg::log_det_spd(cov) {
                Ok(ld) => {
                    let n = self.dim() as f64;
                    (0.5 * (n * (2.0 * std::f64::consts::PI).ln() + ld)).exp()
                }
                Err(_) => f64::INFINITY,
            },
            None => f64::INFINITY,
        }
    }

    /// Posterior possibility function after observing `y = Hx + ε` with
    /// `ε ~ N(0, V)`: the renormalised product of the Gaussian likelihood
    /// and the prior, which is again Gaussian with precision `Λ + HᵀV⁻¹H`.
    pub fn bayes_update(
        &self,
        obs: &DVector<f64>,
        h: &DMatrix<f64>,
        v: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = self.dim();
        let m = obs.len();
        if h.nrows() != m || h.ncols() != n || v.nrows() != m || v.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "bayes_update: obs len {m}, H {}x{}, V {}x{} (state dim {n})",
                h.nrows(),
                h.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        let lv = linalg::chol_lower(v).map_err(|_| Error::SingularMatrix)?;
        let v_inv_h = linalg::solve_with_chol(&lv, h)?;
        let v_inv_y = linalg::solve_spd_vec(&lv, obs)?;
        let mut post_precision = &self.precision + h.transpose() * v_inv_h;
        linalg::symmetrize(&mut post_precision);
        let rhs = &self.precision * &self.mean + h.transpose() * v_inv_y;

        match linalg::chol_lower(&post_precision) {
            Ok(l) => {
                let mean = linalg::solve_spd_vec(&l, &rhs)?;
                let mut cov = linalg::solve_with_chol(&l, &DMatrix::identity(n, n))?;
                linalg::symmetrize(&mut cov);
                Ok(Self {
                    mean,
                    precision: post_precision,
                    covariance: Some(cov),
                })
            }
            Err(_) => {
                // Posterior precision is PSD-singular (e.g. uninformative
                // prior with a partial observation): take the minimum-norm
                // stationary point, on which the possibility equals one.
                let eig = post_precision.clone().symmetric_eigen();
                let max_abs = eig.eigenvalues.amax();
                let tol = 1e-12 * max_abs.max(f64::MIN_POSITIVE);
                let proj = eig.eigenvectors.transpose() * &rhs;
                let mut coeffs = DVector::zeros(n);
                for i in 0..n {
                    if eig.eigenvalues[i] > tol {
                        coeffs[i] = proj[i] / eig.eigenvalues[i];
                    }
                }
                let mean = &eig.eigenvectors * coeffs;
                Ok(Self {
                    mean,
                    precision: post_precision,
                    covariance: None,
                })
            }
        }
    }

    /// Pushes the possibility function through `x ↦ Ax + b` with `A`
    /// invertible, giving `N̄(Aμ + b, AΣAᵀ)` (in precision form
    /// `A⁻ᵀ Λ A⁻¹`, so singular precisions transform too).
    pub fn linear_transform(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let n = self.dim();
        if a.nrows() != n || a.ncols() != n || b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "linear_transform: A is {}x{}, b has length {} (state dim {n})",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let a_inv = a.clone().try_inverse().ok_or(Error::SingularMatrix)?;
        let mut precision = a_inv.transpose() * &self.precision * &a_inv;
        linalg::symmetrize(&mut precision);
        let covariance = self.covariance.as_ref().map(|cov| {
            let mut c = a * cov * a.transpose();
            linalg::symmetrize(&mut c);
            c
        });
        Ok(Self {
            mean: a * &self.mean + b,
            precision,
            covariance,
        })
    }

    /// The affine map carrying `self` onto `target`:
    /// `M(x) = μ̃ + T (x - μ)` with `T = Σ̃^½ (Σ^½)⁻¹` (lower Cholesky
    /// factors). Pushing `self` through the map recovers `target`.
    pub fn transport_map(&self, target: &GaussianPossibility) -> Result<AffineMap> {
        if target.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "transport_map: source dim {} target dim {}",
                self.dim(),
                target.dim()
            )));
        }
        let source_cov = self.covariance.as_ref().ok_or(Error::CovarianceUnavailable)?;
        let target_cov = target
            .covariance
            .as_ref()
            .ok_or(Error::CovarianceUnavailable)?;
        let l_source = linalg::chol_lower(source_cov)?;
        let l_target = linalg::chol_lower_psd(target_cov)?;
        // T L_s = L_t, solved as L_sᵀ Tᵀ = L_tᵀ.
        let t_t = l_source
            .transpose()
            .solve_upper_triangular(&l_target.transpose())
            .ok_or(Error::NotPositiveDefinite)?;
        let t = t_t.transpose();
        let offset = target.mean() - &t * &self.mean;
        AffineMap::new(t, offset)
    }
}

/// An invertible affine map `x ↦ Tx + c`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    linear: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineMap {
    /// Builds the map, rejecting non-square or numerically singular linear
    /// parts (condition number above `1e14`).
    pub fn new(linear: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if linear.nrows() != linear.ncols() || linear.nrows() != offset.len() {
            return Err(Error::DimensionMismatch(format!(
                "affine map: linear {}x{}, offset length {}",
                linear.nrows(),
                linear.ncols(),
                offset.len()
            )));
        }
        if linalg::condition_number(&linear) > 1e14 {
            return Err(Error::SingularMatrix);
        }
        Ok(Self { linear, offset })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            linear: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + &self.offset
    }

    /// The composition `self ∘ inner`, mapping `x` to `self(inner(x))`.
    pub fn compose(&self, inner: &AffineMap) -> Result<AffineMap> {
        AffineMap::new(
            &self.linear * &inner.linear,
            &self.linear * &inner.offset + &self.offset,
        )
    }
}

/// An ensemble of `N + 1` weighted particles describing a possibility
/// function: particle 0 sits at the expected value with weight exactly one,
/// and the weights never change once constructed — filters move particles
/// only through transports.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    particles: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl WeightedEnsemble {
    /// Builds an ensemble from the mode and `N` weighted particles.
    /// Weights at or above one are clamped to just below one; weights that
    /// underflow to zero are floored at the smallest positive double.
    pub fn new(
        mode: DVector<f64>,
        weighted: impl IntoIterator<Item = (f64, DVector<f64>)>,
    ) -> Result<Self> {
        let dim = mode.len();
        let mut particles = vec![mode];
        let mut weights = vec![1.0];
        for (w, x) in weighted {
            if x.len() != dim {
                return Err(Error::InvalidEnsemble(format!(
                    "particle has dimension {} but mode has {dim}",
                    x.len()
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidEnsemble(format!("weight {w} is not in (0, 1]")));
            }
            weights.push(w.min(WEIGHT_CLAMP).max(f64::MIN_POSITIVE));
            particles.push(x);
        }
        Ok(Self { particles, weights })
    }

    /// Rebuilds an ensemble from raw parts, enforcing the invariants
    /// strictly (no clamping): `weights[0] == 1`, all others in `(0, 1)`.
    pub fn from_parts(particles: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(Error::InvalidEnsemble(
                "particles and weights must be non-empty and of equal length".into(),
            ));
        }
        if weights[0] != 1.0 {
            return Err(Error::InvalidEnsemble("weights[0] must equal 1".into()));
        }
        let dim = particles[0].len();
        for (i, (x, &w)) in particles.iter().zip(&weights).enumerate().skip(1) {
            if x.len() != dim {
                return Err(Error::InvalidEnsemble(format!(
                    "particle {i} has dimension {}, expected {dim}",
                    x.len()
                )));
            }
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::InvalidEnsemble(format!(
                    "weight {i} = {w} is not in (0, 1)"
                )));
            }
        }
        Ok(Self { particles, weights })
    }

    /// Number of non-mode particles `N`.
    pub fn sample_size(&self) -> usize {
        self.particles.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    /// The mode particle (index 0), the expected value of the empirical
    /// possibility function.
    pub fn mode(&self) -> &DVector<f64> {
        &self.particles[0]
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Transports every particle through the map; the weights are reused
    /// bit-for-bit.
    pub fn apply_map(&self, map: &AffineMap) -> Result<WeightedEnsemble> {
        if map.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "map dimension {} does not match ensemble dimension {}",
                map.dim(),
                self.dim()
            )));
        }
        Ok(WeightedEnsemble {
            particles: self.particles.iter().map(|x| map.apply(x)).collect(),
            weights: self.weights.clone(),
        })
    }

    /// Rebuilds the ensemble with new particle positions, keeping weights.
    pub(crate) fn with_particles(&self, particles: Vec<DVector<f64>>) -> WeightedEnsemble {
        debug_assert_eq!(particles.len(), self.particles.len());
        WeightedEnsemble {
            particles,
            weights: self.weights.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gauss_1d(mean: f64, var: f64) -> GaussianPossibility {
        GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![mean]),
            DMatrix::from_vec(1, 1, vec![var]),
        )
        .unwrap()
    }

    #[test]
    fn eval_at_mode_is_exactly_one() {
        let g = gauss_1d(3.0, 2.5);
        assert_eq!(g.eval(g.mean()).unwrap(), 1.0);
    }

    #[test]
    fn eval_matches_closed_form() {
        let g = gauss_1d(0.0, 1.0);
        assert_relative_eq!(
            g.eval(&DVector::from_vec(vec![1.0])).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        let g2 = GaussianPossibility::from_mean_cov(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_relative_eq!(
            g2.eval(&DVector::from_vec(vec![1.0, 1.0])).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let g = gauss_1d(0.0, 1.0);
        assert!(g.eval(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn uncertainty_formulas() {
        assert_relative_eq!(
            gauss_1d(0.0, 1.0).epistemic_uncertainty(),
            (2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            gauss_1d(0.0, 4.0).epistemic_uncertainty(),
            (8.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-12
        );
        let ignorant = GaussianPossibility::uninformative(3);
        assert!(ignorant.epistemic_uncertainty().is_infinite());
        assert_eq!(ignorant.eval(&DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap(), 1.0);
    }

    #[test]
    fn bayes_update_from_ignorance_recovers_likelihood() {
        let prior = GaussianPossibility::uninformative(2);
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let y = DVector::from_vec(vec![0.7, -1.2]);
        let post = prior.bayes_update(&y, &DMatrix::identity(2, 2), &v).unwrap();
        assert_relative_eq!(post.mean(), &y, epsilon = 1e-12);
        assert_relative_eq!(post.covariance().unwrap(), &v, epsilon = 1e-10);
        assert_eq!(post.eval(post.mean()).unwrap(), 1.0);
    }

    #[test]
    fn bayes_update_scalar_kalman() {
        let prior = gauss_1d(0.0, 1.0);
        let post = prior
            .bayes_update(
                &DVector::from_vec(vec![2.0]),
                &DMatrix::from_vec(1, 1, vec![1.0]),
                &DMatrix::from_vec(1, 1, vec![1.0]),
            )
            .unwrap();
        assert_relative_eq!(post.mean()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(post.covariance().unwrap()[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn bayes_update_partial_observation_keeps_singular_precision() {
        let prior = GaussianPossibility::uninformative(2);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let v = DMatrix::from_vec(1, 1, vec![0.5]);
        let y = DVector::from_vec(vec![3.0]);
        let post = prior.bayes_update(&y, &h, &v).unwrap();
        assert!(post.covariance().is_none());
        assert_relative_eq!(post.mean()[0], 3.0, epsilon = 1e-12);
        assert_eq!(post.eval(post.mean()).unwrap(), 1.0);
        assert!(post.epistemic_uncertainty().is_infinite());
    }

    #[test]
    fn linear_transform_scalar() {
        let g = gauss_1d(0.0, 1.0);
        let out = g
            .linear_transform(
                &DMatrix::from_vec(1, 1, vec![2.0]),
                &DVector::from_vec(vec![1.0]),
            )
            .unwrap();
        assert_relative_eq!(out.mean()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(out.covariance().unwrap()[(0, 0)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_transform_rotation_preserves_identity_cov() {
        let g = GaussianPossibility::from_mean_cov(DVector::zeros(2), DMatrix::identity(2, 2))
            .unwrap();
        let theta: f64 = 0.7;
        let r = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let out = g.linear_transform(&r, &DVector::zeros(2)).unwrap();
        assert_relative_eq!(out.covariance().unwrap(), &DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn linear_transform_rejects_singular() {
        let g = gauss_1d(0.0, 1.0);
        assert!(matches!(
            g.linear_transform(&DMatrix::from_vec(1, 1, vec![0.0]), &DVector::zeros(1)),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn transport_map_scalar() {
        let src = gauss_1d(0.0, 1.0);
        let dst = gauss_1d(3.0, 4.0);
        let m = src.transport_map(&dst).unwrap();
        assert_relative_eq!(m.linear()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.offset()[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn transport_map_self_is_identity() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let g = GaussianPossibility::from_mean_cov(
            DVector::from_vec(vec![1.0, -2.0, 0.5]),
            cov,
        )
        .unwrap();
        let m = g.transport_map(&g).unwrap();
        assert_relative_eq!(m.linear(), &DMatrix::identity(3, 3), epsilon = 1e-12);
        assert_relative_eq!(m.offset(), &DVector::zeros(3), epsilon = 1e-12);
    }

    #[test]
    fn transport_map_isotropic_scaling() {
        let mu = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let src =
            GaussianPossibility::from_mean_cov(mu.clone(), DMatrix::identity(3, 3)).unwrap();
        let dst =
            GaussianPossibility::from_mean_cov(mu.clone(), DMatrix::identity(3, 3) * 4.0).unwrap();
        let m = src.transport_map(&dst).unwrap();
        assert_relative_eq!(m.linear(), &(DMatrix::identity(3, 3) * 2.0), epsilon = 1e-12);
        let x = DVector::from_vec(vec![2.0, 2.0, 2.0]);
        assert_relative_eq!(m.apply(&x), &mu + 2.0 * (&x - &mu), epsilon = 1e-12);
    }

    #[test]
    fn transport_requires_positive_definite_source() {
        let singular = GaussianPossibility::from_mean_precision(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let target = GaussianPossibility::from_mean_cov(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(singular.transport_map(&target).is_err());
    }

    #[test]
    fn ensemble_clamps_weights() {
        let ens = WeightedEnsemble::new(
            DVector::zeros(1),
            vec![(1.5, DVector::from_vec(vec![1.0]))],
        )
        .unwrap();
        assert_eq!(ens.weights()[0], 1.0);
        assert!(ens.weights()[1] < 1.0);
        assert!(ens.weights()[1] > 1.0 - 1e-11);
    }

    #[test]
    fn apply_map_preserves_weights_bitwise() {
        let ens = WeightedEnsemble::new(
            DVector::zeros(1),
            vec![
                (0.25, DVector::from_vec(vec![1.0])),
                (0.5, DVector::from_vec(vec![-2.0])),
            ],
        )
        .unwrap();
        let m = AffineMap::new(DMatrix::from_vec(1, 1, vec![2.0]), DVector::zeros(1)).unwrap();
        let out = ens.apply_map(&m).unwrap();
        assert_eq!(out.weights(), ens.weights());
        assert_eq!(out.particles()[1][0], 2.0);
        assert_eq!(out.particles()[2][0], -4.0);

        let id = AffineMap::identity(1);
        let same = ens.apply_map(&id).unwrap();
        for (a, b) in same.particles().iter().zip(ens.particles()) {
            assert_eq!(a, b);
        }
    }
}
