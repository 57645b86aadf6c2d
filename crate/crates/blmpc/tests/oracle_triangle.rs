//! Cross-validation of the three posterior oracles on Gaussian-quadratic
//! problems: the quadrature grid, the particle recursion, and the analytic
//! conjugate form must agree on means and covariances.

use blmpc::oracles::{
    analytic_quadratic_posterior, bootstrap_update_se, particle_sequential_update,
    quadrature_posterior, ParticleEnsemble, QuadratureGrid,
};
use blmpc::policy::GaussianPolicy;
use nalgebra::{DMatrix, DVector};

#[test]
fn oracle_triangle_1d() {
    // C = ½θ², prior N(0,1) (R = ½θ²): posterior N(0, ½).
    let prior = GaussianPolicy::standard(1).unwrap();
    let cost = |t: &DVector<f64>| 0.5 * t[0] * t[0];
    let reg = |t: &DVector<f64>| 0.5 * t[0] * t[0];

    let grid = QuadratureGrid::new(vec![(-10.0, 10.0)], vec![4001]).unwrap();
    let quad = quadrature_posterior(&cost, &reg, &grid).unwrap();

    let analytic = analytic_quadratic_posterior(
        &prior,
        &DMatrix::from_vec(1, 1, vec![1.0]),
        &DVector::zeros(1),
    )
    .unwrap();

    let ensemble = ParticleEnsemble::from_policy(&prior, 100_000, 17).unwrap();
    let particles = particle_sequential_update(&ensemble, &cost).unwrap();
    let se = bootstrap_update_se(&ensemble, &cost, 200, 23).unwrap();

    // Quadrature vs analytic: deterministic tolerance.
    assert!((quad.mean[0] - analytic.mean()[0]).abs() <= 1e-6);
    assert!((quad.cov[(0, 0)] - analytic.covariance()[(0, 0)]).abs() <= 1e-6);

    // Particles vs analytic: statistical tolerance.
    let p_mean = particles.ensemble.weighted_mean();
    let p_cov = particles.ensemble.weighted_cov();
    assert!(
        (p_mean[0] - analytic.mean()[0]).abs() <= 3.0 * se.mean[0],
        "mean {} vs {} ± {}",
        p_mean[0],
        analytic.mean()[0],
        3.0 * se.mean[0]
    );
    assert!(
        (p_cov[(0, 0)] - analytic.covariance()[(0, 0)]).abs() <= 3.0 * se.cov[(0, 0)],
        "cov {} vs {} ± {}",
        p_cov[(0, 0)],
        analytic.covariance()[(0, 0)],
        3.0 * se.cov[(0, 0)]
    );
}

#[test]
fn oracle_triangle_2d_with_linear_term() {
    // C = ½θᵀQθ + bᵀθ against an isotropic Gaussian prior.
    let prior = GaussianPolicy::standard(2).unwrap();
    let q = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.8]);
    let b = DVector::from_vec(vec![0.4, -0.2]);
    let qc = q.clone();
    let bc = b.clone();
    let cost = move |t: &DVector<f64>| 0.5 * t.dot(&(&qc * t)) + bc.dot(t);
    let reg = |t: &DVector<f64>| 0.5 * t.norm_squared();

    let grid = QuadratureGrid::new(vec![(-9.0, 9.0), (-9.0, 9.0)], vec![601, 601]).unwrap();
    let quad = quadrature_posterior(&cost, &reg, &grid).unwrap();
    let analytic = analytic_quadratic_posterior(&prior, &q, &b).unwrap();

    for i in 0..2 {
        assert!(
            (quad.mean[i] - analytic.mean()[i]).abs() <= 1e-6,
            "mean[{i}]: {} vs {}",
            quad.mean[i],
            analytic.mean()[i]
        );
        for j in 0..2 {
            assert!(
                (quad.cov[(i, j)] - analytic.covariance()[(i, j)]).abs() <= 1e-6,
                "cov[({i},{j})]"
            );
        }
    }

    let ensemble = ParticleEnsemble::from_policy(&prior, 100_000, 5).unwrap();
    let particles = particle_sequential_update(&ensemble, &cost).unwrap();
    let se = bootstrap_update_se(&ensemble, &cost, 200, 6).unwrap();
    let p_mean = particles.ensemble.weighted_mean();
    let p_cov = particles.ensemble.weighted_cov();
    for i in 0..2 {
        assert!(
            (p_mean[i] - analytic.mean()[i]).abs() <= 3.0 * se.mean[i],
            "particle mean[{i}]"
        );
        for j in 0..2 {
            assert!(
                (p_cov[(i, j)] - analytic.covariance()[(i, j)]).abs() <= 3.0 * se.cov[(i, j)],
                "particle cov[({i},{j})]"
            );
        }
    }
}

#[test]
fn particle_objective_converges_to_sequential_quadrature_objective() {
    let prior = GaussianPolicy::standard(1).unwrap();
    let cost = |t: &DVector<f64>| 0.5 * t[0] * t[0];
    let reg = |t: &DVector<f64>| 0.5 * t[0] * t[0];
    let zero = |_t: &DVector<f64>| 0.0;

    let grid = QuadratureGrid::new(vec![(-10.0, 10.0)], vec![4001]).unwrap();
    let joint = quadrature_posterior(&cost, &reg, &grid).unwrap();
    let prior_mass = quadrature_posterior(&zero, &reg, &grid).unwrap();
    let sequential_objective = joint.objective - prior_mass.objective;

    for (count, seed) in [(1_000usize, 1u64), (100_000, 2)] {
        let ensemble = ParticleEnsemble::from_policy(&prior, count, seed).unwrap();
        let up = particle_sequential_update(&ensemble, &cost).unwrap();
        let se = bootstrap_update_se(&ensemble, &cost, 200, seed + 10).unwrap();
        assert!(
            (up.neg_log_z - sequential_objective).abs() <= 3.0 * se.neg_log_z,
            "M={count}: {} vs {} ± {}",
            up.neg_log_z,
            sequential_objective,
            3.0 * se.neg_log_z
        );
    }
}
