//! Data-parallel batch work vs. an explicit sequential loop over the same
//! per-item public API. With the default `parallel` feature the batch
//! entry points fan out over rayon; without it they compile down to the
//! sequential loop benchmarked here as the baseline.

use blmpc::blr::{estimate_gradients, per_sample_gradient, EstimatorKind};
use blmpc::cost::{CostSpec, UtilityVariant};
use blmpc::policy::GaussianPolicy;
use blmpc::rollout::{integrate, rollout_batch, ControlParameterization};
use blmpc::tasks::DoubleIntegrator;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use std::hint::black_box;

fn cost_spec() -> CostSpec {
    CostSpec::new(
        Box::new(|x: &DVector<f64>| 4.0 * x.norm_squared()),
        Box::new(|_t, x: &DVector<f64>, u: &DVector<f64>| {
            x.norm_squared() + 0.1 * u.norm_squared()
        }),
        UtilityVariant::Negated,
        1e6,
    )
    .unwrap()
}

fn bench_rollout_batch(c: &mut Criterion) {
    let model = DoubleIntegrator;
    let param = ControlParameterization::new(0.0, 2.0, 10, 1, None).unwrap();
    let spec = cost_spec();
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let policy = GaussianPolicy::isotropic(DVector::zeros(10), 1.0).unwrap();

    let mut group = c.benchmark_group("rollout_batch");
    for n in [64usize, 512] {
        let thetas = policy.sample(n, 42);
        group.bench_with_input(BenchmarkId::new("parallel", n), &thetas, |b, thetas| {
            b.iter(|| {
                black_box(
                    rollout_batch(&model, &x0, &param, black_box(thetas), &spec, 40).unwrap(),
                )
            })
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &thetas, |b, thetas| {
            b.iter(|| {
                let costs: Vec<f64> = thetas
                    .iter()
                    .map(|theta| {
                        let traj = integrate(&model, &x0, &param, theta, 40).unwrap();
                        spec.trajectory_cost(&traj)
                    })
                    .collect();
                black_box(costs)
            })
        });
    }
    group.finish();
}

fn bench_gradient_estimation(c: &mut Criterion) {
    let policy = GaussianPolicy::isotropic(DVector::zeros(10), 1.0).unwrap();
    let quadratic = |t: &DVector<f64>| 0.5 * t.norm_squared() + (t[0] * t[3]).sin() * 0.1;
    let thetas = policy.sample(512, 7);
    let costs: Vec<f64> = thetas.iter().map(quadratic).collect();

    let mut group = c.benchmark_group("gradient_estimation");
    group.bench_function("fd_parallel", |b| {
        b.iter(|| {
            black_box(
                estimate_gradients(
                    black_box(&thetas),
                    &costs,
                    &policy,
                    EstimatorKind::GaussNewton,
                    &quadratic,
                    1e-5,
                )
                .unwrap(),
            )
        })
    });
    group.bench_function("fd_sequential", |b| {
        b.iter(|| {
            let grads: Vec<_> = thetas
                .iter()
                .map(|theta| per_sample_gradient(theta, &quadratic, 1e-5).unwrap())
                .collect();
            black_box(grads)
        })
    });
    group.bench_function("score_function", |b| {
        b.iter(|| {
            black_box(
                estimate_gradients(
                    &thetas,
                    &costs,
                    &policy,
                    EstimatorKind::ScoreFunction,
                    &quadratic,
                    1e-5,
                )
                .unwrap(),
            )
        })
    });
    group.finish();
}

fn bench_sampling(c: &mut Criterion) {
    let policy = GaussianPolicy::isotropic(DVector::zeros(20), 1.0).unwrap();
    let mut group = c.benchmark_group("policy_sampling");
    group.bench_function("counter_based_4096", |b| {
        b.iter(|| black_box(policy.sample(4096, black_box(3))))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_rollout_batch,
    bench_gradient_estimation,
    bench_sampling
);
criterion_main!(benches);
