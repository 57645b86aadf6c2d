//! Acceptance suite: nine gate criteria, one test each, printing a
//! pass/fail line per criterion (visible with `--nocapture`). Criteria
//! 1–6 and 8 drive the same checks exposed by `blmpc validate`; 7 runs
//! the closed loop against a brute-force reference, and 9 exercises the
//! compiled binary for byte-level determinism across thread counts.

use blmpc::engine::run_closed_loop;
use blmpc::policy::GaussianPolicy;
use blmpc::rollout::{integrate, ControlParameterization};
use blmpc::tasks::DoubleIntegrator;
use blmpc_cli::config::{default_config, resolve, TaskId};
use blmpc_cli::suites;
use nalgebra::DVector;
use std::path::Path;
use std::process::Command;

fn report(criterion: usize, summary: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {criterion}: {summary} — {detail}");
    assert!(passed, "criterion {criterion} failed: {summary} — {detail}");
}

fn report_suite(criterion: usize, summary: &str, suite: &str) {
    let results = suites::run_suites(Some(suite)).expect("known suite");
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.name, r.detail))
        .collect();
    let detail = if failed.is_empty() {
        results
            .iter()
            .map(|r| r.detail.clone())
            .collect::<Vec<_>>()
            .join("; ")
    } else {
        failed.join("; ")
    };
    report(criterion, summary, failed.is_empty(), &detail);
}

#[test]
fn criterion_1_duality_suite() {
    report_suite(
        1,
        "natural/expectation round trips to 1e-10 and FD grad-A = mu to 1e-5 (d in {1,2,4,8})",
        "duality",
    );
}

#[test]
fn criterion_2_kl_equals_bregman() {
    report_suite(2, "|D_KL - D_A*| <= 1e-8 over 100 random pairs", "kl_bregman");
}

#[test]
fn criterion_3_one_step_fixed_point() {
    report_suite(
        3,
        "gamma=1 analytic-gradient step hits the conjugate posterior (1-D 1e-10, d=8 1e-8)",
        "fixed_point",
    );
}

#[test]
fn criterion_4_estimator_validation() {
    report_suite(
        4,
        "N=1e4 quadratic: both estimators within 3 SE; GaussNewton linear-cost bias shown",
        "estimators",
    );
}

#[test]
fn criterion_5_oracle_triangle() {
    report_suite(
        5,
        "quadrature Z = sqrt(pi) +/- 1e-6; particle M=1e5 within 3 SE; analytic agreement",
        "oracle_triangle",
    );
}

#[test]
fn criterion_6_optimizer_convergence() {
    report_suite(
        6,
        "N=4096 harmonic-rate round: residual <= 10x noise floor in <= 50 iterations, seed-deterministic",
        "convergence",
    );
}

/// Brute-force reference for criterion 7: coordinate descent over the
/// same zero-order-hold knot space the controller executes (20 knots of
/// 0.2 s, |u| <= 4), minimising the final state norm of the same RK4
/// rollout. The closed-loop target must be achievable by some control in
/// this space before the controller is held to it.
fn coordinate_descent_reference() -> f64 {
    let model = DoubleIntegrator;
    let knots = 20;
    let param = ControlParameterization::new(
        0.0,
        4.0,
        knots,
        1,
        Some(vec![(-4.0, 4.0)]),
    )
    .unwrap();
    let steps = knots * 5;
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let final_norm = |theta: &DVector<f64>| {
        integrate(&model, &x0, &param, theta, steps)
            .unwrap()
            .final_state()
            .norm()
    };

    let mut theta = DVector::zeros(knots);
    let mut best = final_norm(&theta);
    for _sweep in 0..60 {
        let mut improved = false;
        for i in 0..knots {
            // Golden-section search on the i-th knot, others fixed.
            let (mut lo, mut hi) = (-4.0f64, 4.0f64);
            let phi = 0.5 * (5.0f64.sqrt() - 1.0);
            let mut x1 = hi - phi * (hi - lo);
            let mut x2 = lo + phi * (hi - lo);
            let eval_at = |v: f64, theta: &mut DVector<f64>| {
                let old = theta[i];
                theta[i] = v;
                let c = final_norm(theta);
                theta[i] = old;
                c
            };
            let mut f1 = eval_at(x1, &mut theta);
            let mut f2 = eval_at(x2, &mut theta);
            for _ in 0..40 {
                if f1 < f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - phi * (hi - lo);
                    f1 = eval_at(x1, &mut theta);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + phi * (hi - lo);
                    f2 = eval_at(x2, &mut theta);
                }
            }
            let candidate = 0.5 * (lo + hi);
            let cand_cost = eval_at(candidate, &mut theta);
            if cand_cost + 1e-12 < best {
                theta[i] = candidate;
                best = cand_cost;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    best
}

#[test]
fn criterion_7_closed_loop_regulation() {
    // The reference optimiser must certify the 0.1 target over the same
    // knot space first.
    let reference = coordinate_descent_reference();
    report(
        7,
        "coordinate-descent reference certifies target 0.1 over the executed knot space",
        reference <= 0.1,
        &format!("reference final norm {reference:.3e}"),
    );

    let loaded = resolve(default_config(TaskId::DoubleIntegrator)).unwrap();
    let cost_spec = loaded.build_cost_spec().unwrap();
    let eta_init = loaded.initial_policy().to_natural();
    let out = run_closed_loop(
        &loaded.mpc,
        loaded.task.dynamics().unwrap(),
        None,
        &cost_spec,
        &loaded.task.initial_state,
        loaded.task.control_bounds.as_deref(),
        &eta_init,
    )
    .unwrap();
    assert_eq!(out.rounds.len(), 20);
    assert!(out.aborted_round.is_none());
    let final_norm = out.final_state().norm();
    report(
        7,
        "double integrator from (1,0), 20 rounds, default config: ||x(end)|| <= 0.1",
        final_norm <= 0.1,
        &format!("final state norm {final_norm:.3e}"),
    );
}

#[test]
fn criterion_8_integrator_order() {
    report_suite(
        8,
        "RK4 step-halving error ratio in [12,20]; trapezoid doubling ratio in [3,5]",
        "integrator",
    );
}

fn run_binary(config: &Path, out: &Path, threads: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_blmpc"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("BLMPC_THREADS", threads)
        .status()
        .expect("binary runs");
    assert!(status.success(), "run failed with threads={threads}");
}

#[test]
fn criterion_9_run_determinism_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    // Default double-integrator task scaled down to keep four runs fast;
    // the determinism contract is identical for any size.
    let config = r#"
[task]
id = "double_integrator"

[mpc]
rounds = 5
samples = 128
max_iters = 8
"#;
    std::fs::write(&config_path, config).unwrap();

    let mut outputs: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
    for (label, threads) in [("t1_a", "1"), ("t1_b", "1"), ("t8_a", "8"), ("t8_b", "8")] {
        let out = dir.path().join(label);
        run_binary(&config_path, &out, threads);
        outputs.push((
            std::fs::read(out.join("trajectory.csv")).unwrap(),
            std::fs::read(out.join("diagnostics.jsonl")).unwrap(),
            std::fs::read(out.join("posterior.json")).unwrap(),
        ));
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    report(
        9,
        "`run` twice at thread counts 1 and 8: byte-identical CSV/JSONL/posterior outputs",
        identical,
        "4 runs compared pairwise",
    );
}
