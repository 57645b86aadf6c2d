//! Independent exact/brute-force posterior solvers used to validate the
//! optimizer: a dense-grid quadrature posterior (d ≤ 2), a weighted
//! particle recursion, and the analytic Gaussian-quadratic conjugate
//! posterior. None of them share code with the optimizer path they check.

use nalgebra::{DMatrix, DVector};

use crate::error::{BlmpcError, Result};
use crate::exec;
use crate::policy::GaussianPolicy;
use crate::rng;

/// Dense tensor-product grid for low-dimensional integrals.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    bounds: Vec<(f64, f64)>,
    counts: Vec<usize>,
}

impl QuadratureGrid {
    pub fn new(bounds: Vec<(f64, f64)>, counts: Vec<usize>) -> Result<Self> {
        let d = bounds.len();
        if d == 0 || d > 2 {
            return Err(BlmpcError::invalid("bounds", "quadrature supports d in {1, 2}"));
        }
        if counts.len() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: counts.len(),
            });
        }
        for (lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(BlmpcError::invalid("bounds", format!("bad interval [{lo}, {hi}]")));
            }
        }
        if counts.iter().any(|c| *c < 16) {
            return Err(BlmpcError::invalid("counts", "need at least 16 points per dimension"));
        }
        if counts.iter().product::<usize>() > 1_000_000 {
            return Err(BlmpcError::invalid("counts", "total grid size exceeds 10^6"));
        }
        Ok(Self { bounds, counts })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn axis(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.bounds[k];
        let n = self.counts[k];
        let h = (hi - lo) / (n - 1) as f64;
        let points: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        (points, weights)
    }
}

/// Output of the quadrature oracle: partition function, optimal Bayesian
/// objective `−log Z`, and the posterior's first two moments.
#[derive(Clone, Debug)]
pub struct QuadraturePosterior {
    pub z: f64,
    pub objective: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Product trapezoid quadrature of `Z = ∫ exp(−C(θ) − R(θ)) dθ` together
/// with the posterior moments of `exp(−C−R)/Z`. Fails when the integrand
/// has not decayed below `1e-8` of its peak at the grid boundary.
pub fn quadrature_posterior(
    cost: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    regulariser: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    grid: &QuadratureGrid,
) -> Result<QuadraturePosterior> {
    let d = grid.dim();
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d).map(|k| grid.axis(k)).collect();
    let total: usize = grid.counts.iter().product();

    let point = |idx: usize| -> (DVector<f64>, f64, bool) {
        let (theta, weight, on_boundary) = match d {
            1 => {
                let (pts, ws) = &axes[0];
                (
                    DVector::from_vec(vec![pts[idx]]),
                    ws[idx],
                    idx == 0 || idx == pts.len() - 1,
                )
            }
            _ => {
                let (px, wx) = &axes[0];
                let (py, wy) = &axes[1];
                let i = idx / py.len();
                let j = idx % py.len();
                (
                    DVector::from_vec(vec![px[i], py[j]]),
                    wx[i] * wy[j],
                    i == 0 || i == px.len() - 1 || j == 0 || j == py.len() - 1,
                )
            }
        };
        (theta, weight, on_boundary)
    };

    struct Node {
        theta: DVector<f64>,
        weight: f64,
        density: f64,
        boundary: bool,
    }
    let nodes: Vec<Node> = exec::build_indexed(total, |idx| {
        let (theta, weight, boundary) = point(idx);
        let density = (-(cost(&theta) + regulariser(&theta))).exp();
        Node {
            theta,
            weight,
            density,
            boundary,
        }
    });

    let peak = nodes.iter().fold(0.0f64, |m, n| m.max(n.density));
    let boundary_peak = nodes
        .iter()
        .filter(|n| n.boundary)
        .fold(0.0f64, |m, n| m.max(n.density));
    if !(peak > 0.0) {
        return Err(BlmpcError::BoundaryMass(
            "integrand is zero everywhere on the grid".into(),
        ));
    }
    if boundary_peak > 1e-8 * peak {
        return Err(BlmpcError::BoundaryMass(format!(
            "boundary integrand {boundary_peak:e} exceeds 1e-8 of peak {peak:e}; enlarge bounds"
        )));
    }

    let z: f64 = nodes.iter().map(|n| n.weight * n.density).sum();
    let mut mean = DVector::zeros(d);
    for n in &nodes {
        mean += &n.theta * (n.weight * n.density);
    }
    mean /= z;
    let mut cov = DMatrix::zeros(d, d);
    for n in &nodes {
        let diff = &n.theta - &mean;
        cov += (&diff * diff.transpose()) * (n.weight * n.density);
    }
    cov /= z;

    Ok(QuadraturePosterior {
        z,
        objective: -z.ln(),
        mean,
        cov,
    })
}

/// Weighted particle approximation of a posterior; the non-parametric side
/// of the sequential Bayes recursion. No resampling: intended for single-
/// or few-step validation, with degeneracy visible through [`ParticleEnsemble::ess`].
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    particles: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Build from particles and unnormalised nonnegative weights.
    pub fn new(particles: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(BlmpcError::EmptyBatch);
        }
        if particles.len() != weights.len() {
            return Err(BlmpcError::DimensionMismatch {
                expected: particles.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(BlmpcError::invalid("weights", "must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(BlmpcError::WeightUnderflow);
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { particles, weights })
    }

    /// Equally weighted draws from a Gaussian prior.
    pub fn from_policy(policy: &GaussianPolicy, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(BlmpcError::EmptyBatch);
        }
        let particles = policy.sample(count, seed);
        let weights = vec![1.0 / count as f64; count];
        Ok(Self { particles, weights })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Effective sample size `1 / Σ wᵢ²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        let d = self.particles[0].len();
        let mut mean = DVector::zeros(d);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            mean += p * *w;
        }
        mean
    }

    pub fn weighted_cov(&self) -> DMatrix<f64> {
        let d = self.particles[0].len();
        let mean = self.weighted_mean();
        let mut cov = DMatrix::zeros(d, d);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let diff = p - &mean;
            cov += (&diff * diff.transpose()) * *w;
        }
        cov
    }
}

/// Result of one sequential Bayes reweighting.
#[derive(Clone, Debug)]
pub struct ParticleUpdate {
    pub ensemble: ParticleEnsemble,
    /// `−log Ẑ`, the Monte-Carlo estimate of the round's optimal Bayesian
    /// objective.
    pub neg_log_z: f64,
}

/// Sequential posterior update `w′ᵢ ∝ exp(−C(θᵢ)) wᵢ`, renormalised, with
/// `Ẑ = Σᵢ wᵢ exp(−C(θᵢ))`. Computed in log space so large cost scales
/// degrade gracefully; only a fully underflowed ensemble errors.
pub fn particle_sequential_update(
    ensemble: &ParticleEnsemble,
    cost: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
) -> Result<ParticleUpdate> {
    let costs: Vec<f64> = exec::map_indexed(ensemble.particles(), |_, p| cost(p));
    let log_terms: Vec<f64> = ensemble
        .weights
        .iter()
        .zip(&costs)
        .map(|(w, c)| if *w > 0.0 { w.ln() - c } else { f64::NEG_INFINITY })
        .collect();
    let peak = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(BlmpcError::WeightUnderflow);
    }
    let rel: Vec<f64> = log_terms.iter().map(|lt| (lt - peak).exp()).collect();
    let rel_sum: f64 = rel.iter().sum();
    let weights: Vec<f64> = rel.iter().map(|r| r / rel_sum).collect();
    Ok(ParticleUpdate {
        ensemble: ParticleEnsemble {
            particles: ensemble.particles.clone(),
            weights,
        },
        neg_log_z: -(peak + rel_sum.ln()),
    })
}

/// Bootstrap standard errors for the particle oracle's outputs: resample
/// the ensemble, redo the reweighting, and report the spread across
/// replicates.
#[derive(Clone, Debug)]
pub struct BootstrapSe {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub neg_log_z: f64,
}

pub fn bootstrap_update_se(
    prior: &ParticleEnsemble,
    cost: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    resamples: usize,
    seed: u64,
) -> Result<BootstrapSe> {
    if resamples < 2 {
        return Err(BlmpcError::invalid("resamples", "need at least 2 bootstrap replicates"));
    }
    let m = prior.len();
    let d = prior.particles[0].len();
    let costs: Vec<f64> = exec::map_indexed(prior.particles(), |_, p| cost(p));
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for w in &prior.weights {
        acc += w;
        cdf.push(acc);
    }

    struct Replicate {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        neg_log_z: f64,
    }
    let reps: Vec<Replicate> = exec::build_indexed(resamples, |b| {
        use rand::Rng;
        let mut r = rng::stream_rng(seed, b as u64);
        let mut idx = Vec::with_capacity(m);
        for _ in 0..m {
            let u: f64 = r.gen();
            let i = cdf.partition_point(|c| *c < u).min(m - 1);
            idx.push(i);
        }
        let peak = idx.iter().map(|i| -costs[*i]).fold(f64::NEG_INFINITY, f64::max);
        let rel: Vec<f64> = idx.iter().map(|i| (-costs[*i] - peak).exp()).collect();
        let rel_sum: f64 = rel.iter().sum();
        let mut mean = DVector::zeros(d);
        for (r_i, i) in rel.iter().zip(&idx) {
            mean += &prior.particles[*i] * (*r_i / rel_sum);
        }
        let mut cov = DMatrix::zeros(d, d);
        for (r_i, i) in rel.iter().zip(&idx) {
            let diff = &prior.particles[*i] - &mean;
            cov += (&diff * diff.transpose()) * (*r_i / rel_sum);
        }
        Replicate {
            mean,
            cov,
            neg_log_z: -(peak + (rel_sum / m as f64).ln()),
        }
    });

    let mean_of = |f: &dyn Fn(&Replicate) -> f64| {
        reps.iter().map(|r| f(r)).sum::<f64>() / resamples as f64
    };
    let se_of = |f: &dyn Fn(&Replicate) -> f64| {
        let mu = mean_of(f);
        (reps.iter().map(|r| (f(r) - mu).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
    };
    let se_mean = DVector::from_fn(d, |i, _| se_of(&|r: &Replicate| r.mean[i]));
    let se_cov = DMatrix::from_fn(d, d, |i, j| se_of(&|r: &Replicate| r.cov[(i, j)]));
    Ok(BootstrapSe {
        mean: se_mean,
        cov: se_cov,
        neg_log_z: se_of(&|r: &Replicate| r.neg_log_z),
    })
}

/// Conjugate closed form for the quadratic cost `C(θ) = ½θᵀQθ + bᵀθ`
/// against a Gaussian prior: the fixed point the BLR should reach.
pub fn analytic_quadratic_posterior(
    prior: &GaussianPolicy,
    q: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<GaussianPolicy> {
    let d = prior.dim();
    if q.nrows() != d || q.ncols() != d || b.len() != d {
        return Err(BlmpcError::DimensionMismatch {
            expected: d,
            got: q.nrows().max(b.len()),
        });
    }
    let prior_precision = prior.precision();
    let q_sym = (q + q.transpose()) * 0.5;
    let precision_post = &prior_precision + q_sym;
    let chol = nalgebra::Cholesky::new(precision_post).ok_or(BlmpcError::NotPositiveDefinite)?;
    let mean_post = chol.solve(&(&prior_precision * prior.mean() - b));
    GaussianPolicy::new(mean_post, chol.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn grid_1d(half_width: f64, n: usize) -> QuadratureGrid {
        QuadratureGrid::new(vec![(-half_width, half_width)], vec![n]).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(QuadratureGrid::new(vec![(-1.0, 1.0); 3], vec![32; 3]).is_err());
        assert!(QuadratureGrid::new(vec![(-1.0, 1.0)], vec![8]).is_err());
        assert!(QuadratureGrid::new(vec![(1.0, -1.0)], vec![32]).is_err());
        assert!(QuadratureGrid::new(vec![(-1.0, 1.0); 2], vec![1024, 1024]).is_err());
    }

    #[test]
    fn gaussian_partition_function() {
        // exp(−θ²) integrates to √π; posterior is N(0, ½).
        let half_quad = |t: &DVector<f64>| 0.5 * t[0] * t[0];
        let grid = grid_1d(10.0, 8001);
        let out = quadrature_posterior(&half_quad, &half_quad, &grid).unwrap();
        assert_abs_diff_eq!(out.z, std::f64::consts::PI.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(out.objective, -0.5 * std::f64::consts::PI.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(out.mean[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cov[(0, 0)], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn free_cost_recovers_prior() {
        let zero = |_t: &DVector<f64>| 0.0;
        let half_quad = |t: &DVector<f64>| 0.5 * t[0] * t[0];
        let out = quadrature_posterior(&zero, &half_quad, &grid_1d(12.0, 4001)).unwrap();
        assert_abs_diff_eq!(out.z, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(out.cov[(0, 0)], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn linear_cost_tilts_mean() {
        let q = 0.8;
        let linear = move |t: &DVector<f64>| q * t[0];
        let half_quad = |t: &DVector<f64>| 0.5 * t[0] * t[0];
        let out = quadrature_posterior(&linear, &half_quad, &grid_1d(14.0, 4001)).unwrap();
        assert_abs_diff_eq!(out.mean[0], -q, epsilon = 1e-8);
    }

    #[test]
    fn boundary_mass_violation_detected() {
        let flatish = |t: &DVector<f64>| 0.01 * t[0] * t[0];
        let zero = |_t: &DVector<f64>| 0.0;
        assert!(matches!(
            quadrature_posterior(&flatish, &zero, &grid_1d(2.0, 64)),
            Err(BlmpcError::BoundaryMass(_))
        ));
    }

    #[test]
    fn particle_update_constant_cost() {
        let prior = GaussianPolicy::standard(1).unwrap();
        let ens = ParticleEnsemble::from_policy(&prior, 512, 5).unwrap();
        let flat = |_t: &DVector<f64>| 0.0;
        let up = particle_sequential_update(&ens, &flat).unwrap();
        assert_eq!(up.ensemble.weights(), ens.weights());
        assert_abs_diff_eq!(up.neg_log_z, 0.0, epsilon = 1e-12);

        let shifted = |_t: &DVector<f64>| 2.5;
        let up = particle_sequential_update(&ens, &shifted).unwrap();
        assert_eq!(up.ensemble.weights(), ens.weights());
        assert_abs_diff_eq!(up.neg_log_z, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn particle_posterior_matches_quadrature() {
        let prior = GaussianPolicy::standard(1).unwrap();
        let ens = ParticleEnsemble::from_policy(&prior, 100_000, 21).unwrap();
        let half_quad = |t: &DVector<f64>| 0.5 * t[0] * t[0];
        let up = particle_sequential_update(&ens, &half_quad).unwrap();
        let se = bootstrap_update_se(&ens, &half_quad, 200, 77).unwrap();

        let var = up.ensemble.weighted_cov()[(0, 0)];
        assert!(
            (var - 0.5).abs() <= 3.0 * se.cov[(0, 0)],
            "var {var} vs 0.5 ± {}",
            3.0 * se.cov[(0, 0)]
        );
        // The particle recursion normalises by the prior, so compare to
        // the sequential objective −log(Z / Z_prior).
        let quad = quadrature_posterior(&half_quad, &half_quad, &grid_1d(10.0, 4001)).unwrap();
        let zero = |_t: &DVector<f64>| 0.0;
        let prior_mass = quadrature_posterior(&zero, &half_quad, &grid_1d(10.0, 4001)).unwrap();
        let sequential_objective = quad.objective - prior_mass.objective;
        assert!(
            (up.neg_log_z - sequential_objective).abs() <= 3.0 * se.neg_log_z,
            "objective {} vs {} ± {}",
            up.neg_log_z,
            sequential_objective,
            3.0 * se.neg_log_z
        );
        // Weights always renormalise.
        let total: f64 = up.ensemble.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(up.ensemble.ess() > 1.0);
    }

    #[test]
    fn particle_underflow_errors() {
        let prior = GaussianPolicy::standard(1).unwrap();
        let ens = ParticleEnsemble::from_policy(&prior, 64, 5).unwrap();
        let hopeless = |_t: &DVector<f64>| f64::INFINITY;
        assert!(matches!(
            particle_sequential_update(&ens, &hopeless),
            Err(BlmpcError::WeightUnderflow)
        ));
    }

    #[test]
    fn analytic_posterior_closed_forms() {
        let prior = GaussianPolicy::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap();
        let post = analytic_quadratic_posterior(
            &prior,
            &DMatrix::from_vec(1, 1, vec![1.0]),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_relative_eq!(post.mean()[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(post.covariance()[(0, 0)], 0.5, max_relative = 1e-12);

        // Zero likelihood leaves the prior untouched.
        let same = analytic_quadratic_posterior(
            &prior,
            &DMatrix::zeros(1, 1),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_relative_eq!(same.mean()[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(same.covariance()[(0, 0)], 1.0, max_relative = 1e-12);

        // A pure linear tilt shifts the mean by −Σb.
        let standard = GaussianPolicy::standard(1).unwrap();
        let tilted = analytic_quadratic_posterior(
            &standard,
            &DMatrix::zeros(1, 1),
            &DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert_relative_eq!(tilted.mean()[0], -1.0, max_relative = 1e-12);
        assert_relative_eq!(tilted.covariance()[(0, 0)], 1.0, max_relative = 1e-12);
    }
}
