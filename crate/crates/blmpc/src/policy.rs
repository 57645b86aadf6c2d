//! Gaussian policy over control-knot vectors as a minimal exponential
//! family.
//!
//! A policy `N(m, Σ)` is kept in mean/Cholesky form and exposed in two dual
//! coordinate systems: natural parameters `η = (Σ⁻¹m, −½Σ⁻¹)` and
//! expectation parameters `μ = (m, Σ + mmᵀ)`. The log-partition function
//! ties the two together: `∇_η A = μ`. All densities use the carrier
//! `ρ(θ) = (2π)^(−d/2)` with sufficient statistics `T(θ) = (θ, θθᵀ)` and
//! the Frobenius inner product on the matrix component, which makes
//! `A(η) = ½ mᵀΣ⁻¹m + ½ log det Σ`.
//!
//! Matrix-valued parameters are re-symmetrised as `(M + Mᵀ)/2` on
//! construction so that update arithmetic cannot drift off the symmetric
//! manifold.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{BlmpcError, Result};
use crate::{exec, rng};

/// Frobenius inner product of two equally sized matrices.
fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.zip_fold(b, 0.0, |acc, x, y| acc + x * y)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Gaussian policy `N(m, Σ)` with `Σ` held as a lower-triangular Cholesky
/// factor. Construction fails unless `Σ` is symmetric positive definite,
/// so a value of this type is always a valid distribution.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianPolicy {
    /// Build from mean and covariance. The covariance is symmetrised before
    /// factorization.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(BlmpcError::invalid("mean", "dimension must be >= 1"));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        let chol =
            Cholesky::new(symmetrize(&covariance)).ok_or(BlmpcError::NotPositiveDefinite)?;
        Ok(Self { mean, chol })
    }

    /// Isotropic policy `N(mean, var·I)`.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(BlmpcError::invalid("var", "variance must be > 0"));
        }
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * var)
    }

    /// Standard normal policy `N(0, I)` in `d` dimensions.
    pub fn standard(d: usize) -> Result<Self> {
        Self::isotropic(DVector::zeros(d), 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance reconstructed from the stored factor.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    /// Lower-triangular factor `L` with `Σ = L Lᵀ`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Precision `Σ⁻¹` via triangular solves on the stored factor.
    pub fn precision(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Natural parameters `(Σ⁻¹m, −½Σ⁻¹)` via the Cholesky factor.
    pub fn to_natural(&self) -> NaturalParams {
        let eta1 = self.chol.solve(&self.mean);
        let eta2 = self.chol.inverse() * -0.5;
        NaturalParams {
            eta1,
            eta2: symmetrize(&eta2),
        }
    }

    /// Expectation parameters `(m, Σ + mmᵀ)`.
    pub fn to_expectation(&self) -> ExpectationParams {
        ExpectationParams {
            mu1: self.mean.clone(),
            mu2: self.covariance() + &self.mean * self.mean.transpose(),
        }
    }

    /// Recover the policy from natural parameters. Inverse of
    /// [`GaussianPolicy::to_natural`].
    pub fn from_natural(eta: &NaturalParams) -> Result<Self> {
        let precision = symmetrize(&(-2.0 * &eta.eta2));
        let chol_p = Cholesky::new(precision).ok_or(BlmpcError::NotNegativeDefinite)?;
        let mean = chol_p.solve(&eta.eta1);
        let covariance = chol_p.inverse();
        Self::new(mean, covariance)
    }

    /// Draw `n` samples `θ⁽ⁱ⁾ = m + L z⁽ⁱ⁾`. The i-th draw uses its own
    /// counter-based stream, so output is bit-identical for the same
    /// `(policy, n, seed)` under any evaluation order or thread count.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let d = self.dim();
        let l = self.chol.l();
        exec::build_indexed(n, |i| {
            &self.mean + &l * rng::standard_normal_vector(d, seed, i as u64)
        })
    }

    /// Log-density via the standard Gaussian form
    /// `−½ log det(2πΣ) − ½ (θ−m)ᵀΣ⁻¹(θ−m)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let diff = x - &self.mean;
        let quad = diff.dot(&self.chol.solve(&diff));
        Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det_cov() + quad))
    }

    /// Log-density via the exponential-family form
    /// `⟨η, T(θ)⟩ − A(η) + log ρ(θ)`. Agrees with
    /// [`GaussianPolicy::log_density`] to high precision; kept as an
    /// independent evaluation path.
    pub fn log_density_expfam(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let eta = self.to_natural();
        let stat2 = x * x.transpose();
        let pairing = eta.eta1.dot(x) + frobenius(&eta.eta2, &stat2);
        let log_carrier = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(pairing - eta.log_partition() + log_carrier)
    }

    /// Differential entropy `½ log det(2πeΣ)`.
    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        0.5 * (d * (1.0 + (2.0 * std::f64::consts::PI).ln()) + self.log_det_cov())
    }

    /// Closed-form `D_KL[self ‖ other]`.
    pub fn kl_divergence(&self, other: &GaussianPolicy) -> Result<f64> {
        let d = self.dim();
        if other.dim() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: other.dim(),
            });
        }
        let trace = other.chol.solve(&self.covariance()).trace();
        let diff = &other.mean - &self.mean;
        let quad = diff.dot(&other.chol.solve(&diff));
        Ok(0.5 * (trace + quad - d as f64 + other.log_det_cov() - self.log_det_cov()))
    }
}

/// Natural coordinates `η = (η⁽¹⁾, η⁽²⁾) = (Σ⁻¹m, −½Σ⁻¹)`. `η⁽²⁾` is kept
/// as a full symmetric matrix; validity requires `−2η⁽²⁾` positive
/// definite.
#[derive(Clone, Debug)]
pub struct NaturalParams {
    eta1: DVector<f64>,
    eta2: DMatrix<f64>,
}

impl NaturalParams {
    /// Validating constructor; symmetrises `eta2` and checks negative
    /// definiteness.
    pub fn new(eta1: DVector<f64>, eta2: DMatrix<f64>) -> Result<Self> {
        let d = eta1.len();
        if eta2.nrows() != d || eta2.ncols() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: eta2.nrows(),
            });
        }
        let eta2 = symmetrize(&eta2);
        if Cholesky::new(-2.0 * &eta2).is_none() {
            return Err(BlmpcError::NotNegativeDefinite);
        }
        Ok(Self { eta1, eta2 })
    }

    pub fn dim(&self) -> usize {
        self.eta1.len()
    }

    pub fn eta1(&self) -> &DVector<f64> {
        &self.eta1
    }

    pub fn eta2(&self) -> &DMatrix<f64> {
        &self.eta2
    }

    /// Log-partition `A(η)` under the `(2π)^(−d/2)` carrier:
    /// `½ mᵀΣ⁻¹m + ½ log det Σ`. Its gradient in `η` is the expectation
    /// parameter `μ`.
    pub fn log_partition(&self) -> f64 {
        let precision = -2.0 * &self.eta2;
        // Constructor guarantees this factorization exists.
        let chol_p = Cholesky::new(precision).expect("validated negative definite");
        let mean = chol_p.solve(&self.eta1);
        let half_log_det_precision =
            chol_p.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        0.5 * self.eta1.dot(&mean) - half_log_det_precision
    }

    /// Euclidean norm over the stacked `(η⁽¹⁾, η⁽²⁾)` components.
    pub fn stacked_norm(&self) -> f64 {
        (self.eta1.norm_squared() + self.eta2.norm_squared()).sqrt()
    }

    /// Norm of the stacked componentwise difference.
    pub fn stacked_distance(&self, other: &NaturalParams) -> f64 {
        ((&self.eta1 - &other.eta1).norm_squared() + (&self.eta2 - &other.eta2).norm_squared())
            .sqrt()
    }
}

/// Expectation coordinates `μ = (μ⁽¹⁾, μ⁽²⁾) = (m, Σ + mmᵀ)`, i.e. the
/// expected sufficient statistics `E[T(θ)]`.
#[derive(Clone, Debug)]
pub struct ExpectationParams {
    mu1: DVector<f64>,
    mu2: DMatrix<f64>,
}

impl ExpectationParams {
    /// Validating constructor; requires `μ⁽²⁾ − μ⁽¹⁾μ⁽¹⁾ᵀ` (the implied
    /// covariance) to be positive definite.
    pub fn new(mu1: DVector<f64>, mu2: DMatrix<f64>) -> Result<Self> {
        let d = mu1.len();
        if mu2.nrows() != d || mu2.ncols() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: mu2.nrows(),
            });
        }
        let mu2 = symmetrize(&mu2);
        let cov = &mu2 - &mu1 * mu1.transpose();
        if Cholesky::new(cov).is_none() {
            return Err(BlmpcError::NotPositiveDefinite);
        }
        Ok(Self { mu1, mu2 })
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn mu1(&self) -> &DVector<f64> {
        &self.mu1
    }

    pub fn mu2(&self) -> &DMatrix<f64> {
        &self.mu2
    }

    /// The Gaussian with these moments.
    pub fn to_policy(&self) -> Result<GaussianPolicy> {
        GaussianPolicy::new(self.mu1.clone(), &self.mu2 - &self.mu1 * self.mu1.transpose())
    }
}

/// Pairing `⟨η, μ⟩ = η⁽¹⁾·μ⁽¹⁾ + ⟨η⁽²⁾, μ⁽²⁾⟩_F` between dual coordinates.
fn pairing(eta: &NaturalParams, mu: &ExpectationParams) -> f64 {
    eta.eta1.dot(&mu.mu1) + frobenius(&eta.eta2, &mu.mu2)
}

/// Bregman divergence `D_{A*}[μ₁ ‖ μ₂]` of the log-partition's Legendre
/// dual, evaluated through `A` and the η↔μ duality:
/// `A(η₂) − A(η₁) + ⟨η₁ − η₂, μ₁⟩`. Equals `D_KL[q₁ ‖ q₂]` for the
/// corresponding Gaussians.
pub fn bregman_a_star(mu1: &ExpectationParams, mu2: &ExpectationParams) -> Result<f64> {
    if mu1.dim() != mu2.dim() {
        return Err(BlmpcError::DimensionMismatch {
            expected: mu1.dim(),
            got: mu2.dim(),
        });
    }
    let eta1 = mu1.to_policy()?.to_natural();
    let eta2 = mu2.to_policy()?.to_natural();
    Ok(eta2.log_partition() - eta1.log_partition() + pairing(&eta1, mu1) - pairing(&eta2, mu1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn policy_1d(m: f64, var: f64) -> GaussianPolicy {
        GaussianPolicy::new(DVector::from_vec(vec![m]), DMatrix::from_vec(1, 1, vec![var]))
            .unwrap()
    }

    #[test]
    fn to_natural_scalar_and_identity() {
        let eta = policy_1d(1.0, 2.0).to_natural();
        assert_relative_eq!(eta.eta1()[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(eta.eta2()[(0, 0)], -0.25, max_relative = 1e-12);

        let eta = GaussianPolicy::standard(2).unwrap().to_natural();
        assert_abs_diff_eq!(eta.eta1()[0], 0.0);
        assert_abs_diff_eq!(eta.eta1()[1], 0.0);
        assert_relative_eq!(eta.eta2()[(0, 0)], -0.5, max_relative = 1e-12);
        assert_relative_eq!(eta.eta2()[(1, 1)], -0.5, max_relative = 1e-12);
        assert_abs_diff_eq!(eta.eta2()[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn to_natural_2x2_hand_inverse() {
        // Σ = [[2,1],[1,2]] has inverse [[2,-1],[-1,2]]/3.
        let policy = GaussianPolicy::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
        )
        .unwrap();
        let eta = policy.to_natural();
        assert_relative_eq!(eta.eta1()[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(eta.eta1()[1], -1.0, max_relative = 1e-12);
        assert_relative_eq!(eta.eta2()[(0, 0)], -1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(eta.eta2()[(0, 1)], 1.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(eta.eta2()[(1, 1)], -1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn to_expectation_examples() {
        let mu = policy_1d(1.0, 2.0).to_expectation();
        assert_relative_eq!(mu.mu1()[0], 1.0);
        assert_relative_eq!(mu.mu2()[(0, 0)], 3.0, max_relative = 1e-12);

        let mu = policy_1d(0.0, 1.0).to_expectation();
        assert_abs_diff_eq!(mu.mu1()[0], 0.0);
        assert_relative_eq!(mu.mu2()[(0, 0)], 1.0);

        let policy = GaussianPolicy::new(
            DVector::from_vec(vec![2.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let mu = policy.to_expectation();
        assert_relative_eq!(mu.mu2()[(0, 0)], 5.0, max_relative = 1e-12);
        assert_relative_eq!(mu.mu2()[(1, 1)], 1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(mu.mu2()[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn from_natural_inverts_to_natural() {
        let eta = NaturalParams::new(
            DVector::from_vec(vec![0.5]),
            DMatrix::from_vec(1, 1, vec![-0.25]),
        )
        .unwrap();
        let policy = GaussianPolicy::from_natural(&eta).unwrap();
        assert_relative_eq!(policy.mean()[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(policy.covariance()[(0, 0)], 2.0, max_relative = 1e-12);

        let eta = NaturalParams::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_vec(1, 1, vec![-0.5]),
        )
        .unwrap();
        let policy = GaussianPolicy::from_natural(&eta).unwrap();
        assert_abs_diff_eq!(policy.mean()[0], 0.0);
        assert_relative_eq!(policy.covariance()[(0, 0)], 1.0, max_relative = 1e-12);

        let eta = NaturalParams::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[-1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, -1.0 / 3.0]),
        )
        .unwrap();
        let policy = GaussianPolicy::from_natural(&eta).unwrap();
        assert_relative_eq!(policy.mean()[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(policy.mean()[1], -1.0, max_relative = 1e-10);
    }

    #[test]
    fn from_natural_rejects_non_negative_definite() {
        assert!(matches!(
            NaturalParams::new(
                DVector::from_vec(vec![0.0]),
                DMatrix::from_vec(1, 1, vec![0.1]),
            ),
            Err(BlmpcError::NotNegativeDefinite)
        ));
    }

    #[test]
    fn new_rejects_non_spd_covariance() {
        let bad = GaussianPolicy::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(bad, Err(BlmpcError::NotPositiveDefinite)));
    }

    #[test]
    fn sampling_is_deterministic_and_near_degenerate_limit_hugs_mean() {
        let policy = GaussianPolicy::new(
            DVector::from_vec(vec![3.0, -2.0]),
            DMatrix::identity(2, 2) * 1e-12,
        )
        .unwrap();
        let a = policy.sample(64, 9);
        let b = policy.sample(64, 9);
        assert_eq!(a, b);
        for theta in &a {
            assert!((theta[0] - 3.0).abs() < 1e-4);
            assert!((theta[1] + 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_moments_match_clt_bounds() {
        let n = 100_000;
        let samples = policy_1d(0.0, 1.0).sample(n, 1234);
        let mean = samples.iter().map(|s| s[0]).sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn log_density_closed_forms() {
        let standard = policy_1d(0.0, 1.0);
        let x0 = DVector::from_vec(vec![0.0]);
        let x1 = DVector::from_vec(vec![1.0]);
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(
            standard.log_density(&x0).unwrap(),
            -half_log_2pi,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            standard.log_density(&x1).unwrap(),
            -0.5 - half_log_2pi,
            max_relative = 1e-12
        );

        // At the mean the quadratic term vanishes: −½ log det(2πΣ).
        let policy = GaussianPolicy::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
        )
        .unwrap();
        let at_mean = policy.log_density(policy.mean()).unwrap();
        let expected = -0.5 * (2.0 * (2.0 * std::f64::consts::PI).ln() + 3.0f64.ln());
        assert_relative_eq!(at_mean, expected, max_relative = 1e-12);
    }

    #[test]
    fn log_density_paths_agree() {
        let policy = GaussianPolicy::new(
            DVector::from_vec(vec![0.3, -0.7]),
            DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.9]),
        )
        .unwrap();
        for x in policy.sample(32, 5) {
            let a = policy.log_density(&x).unwrap();
            let b = policy.log_density_expfam(&x).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_density_rejects_dimension_mismatch() {
        let policy = GaussianPolicy::standard(2).unwrap();
        assert!(policy.log_density(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn log_partition_closed_forms() {
        assert_abs_diff_eq!(
            policy_1d(0.0, 1.0).to_natural().log_partition(),
            0.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            policy_1d(1.0, 1.0).to_natural().log_partition(),
            0.5,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            policy_1d(0.0, 2.0).to_natural().log_partition(),
            0.5 * 2.0f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn kl_divergence_closed_forms() {
        let std1 = policy_1d(0.0, 1.0);
        assert_abs_diff_eq!(std1.kl_divergence(&std1).unwrap(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(
            policy_1d(1.0, 1.0).kl_divergence(&std1).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            policy_1d(0.0, 2.0).kl_divergence(&std1).unwrap(),
            0.5 * (2.0 - 1.0 - 2.0f64.ln()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn bregman_matches_kl() {
        let cases = [
            (policy_1d(0.0, 1.0), policy_1d(0.0, 1.0), 0.0),
            (policy_1d(1.0, 1.0), policy_1d(0.0, 1.0), 0.5),
            (
                policy_1d(0.0, 2.0),
                policy_1d(0.0, 1.0),
                0.5 * (2.0 - 1.0 - 2.0f64.ln()),
            ),
        ];
        for (q1, q2, expected) in cases {
            let d = bregman_a_star(&q1.to_expectation(), &q2.to_expectation()).unwrap();
            assert_abs_diff_eq!(d, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn entropy_closed_forms() {
        let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
        assert_relative_eq!(
            policy_1d(0.0, 1.0).entropy(),
            0.5 * two_pi_e.ln(),
            max_relative = 1e-12
        );
        // Unit-determinant case: variance (2πe)⁻¹ has zero entropy.
        assert_abs_diff_eq!(policy_1d(0.0, 1.0 / two_pi_e).entropy(), 0.0, epsilon = 1e-12);
        // Scaling a 1-D variance by c adds ½ ln c.
        let c = 3.7;
        assert_relative_eq!(
            policy_1d(0.4, c).entropy() - policy_1d(0.4, 1.0).entropy(),
            0.5 * c.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn expectation_params_reject_deficient_second_moment() {
        // mu2 − mu1 mu1ᵀ = 0 is not positive definite.
        assert!(ExpectationParams::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .is_err());
    }
}
