//! Subcommand implementations. Exit-code contract: 0 success, 2 config
//! error, 3 numerical failure, 4 validation failure.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use nalgebra::DVector;

use blmpc::engine::{plan_round, run_closed_loop, run_rounds, RolloutCost, RoundResult};
use blmpc::oracles::{
    analytic_quadratic_posterior, particle_sequential_update, quadrature_posterior,
    ParticleEnsemble, QuadratureGrid,
};
use blmpc::rng::derive_seed;
use blmpc::rollout::ControlParameterization;
use blmpc::tasks::{QuadraticCost, ScaledDynamics};

use crate::config::{load_config, ConfigError, LoadedConfig, TaskModel};
use crate::io;

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] anyhow::Error),
    #[error("validation failed: {failures} check(s) did not pass")]
    Validation { failures: usize },
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Numerical(_) => 3,
            CmdError::Validation { .. } => 4,
        }
    }
}

const PARTICLE_ORACLE_COUNT: usize = 100_000;

fn init_threads(threads: usize) {
    if threads > 0 {
        // A second call in the same process keeps the first pool; that is
        // fine for the CLI, which configures it once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn ensure_out_dir(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
}

/// Build the planning window starting at `t_start` for the loaded task.
fn window(loaded: &LoadedConfig, t_start: f64) -> anyhow::Result<ControlParameterization> {
    Ok(ControlParameterization::new(
        t_start,
        t_start + loaded.mpc.horizon,
        loaded.mpc.knots,
        loaded.task.control_dim(),
        loaded.task.control_bounds.clone(),
    )?)
}

/// `plan`: one round from the configured initial policy; writes the
/// posterior and the planned control over the full horizon.
pub fn cmd_plan(config_path: &Path, out: &Path) -> Result<(), CmdError> {
    let loaded = load_config(config_path)?;
    init_threads(loaded.threads);
    ensure_out_dir(out)?;
    let eta_init = loaded.initial_policy().to_natural();
    let param = window(&loaded, 0.0)?;

    let round = match &loaded.task.model {
        TaskModel::Synthetic { q, b } => {
            let cost = QuadraticCost::new(q.clone(), b.clone()).map_err(anyhow::Error::from)?;
            plan_round(&loaded.mpc, &cost, &param, &eta_init, 0).map_err(anyhow::Error::from)?
        }
        _ => {
            let cost_spec = loaded.build_cost_spec().expect("dynamics task has a cost");
            let cost = RolloutCost {
                model: loaded.task.dynamics().expect("dynamics task"),
                initial_state: loaded.task.initial_state.clone(),
                param: param.clone(),
                cost_spec: &cost_spec,
                steps: loaded.mpc.steps,
            };
            plan_round(&loaded.mpc, &cost, &param, &eta_init, 0).map_err(anyhow::Error::from)?
        }
    };

    io::write_posterior(&out.join("posterior.json"), &round.posterior)?;
    io::write_planned_control_csv(
        &out.join("planned_control.csv"),
        &param,
        round.posterior.mean(),
        loaded.mpc.steps,
    )?;
    io::write_diagnostics_jsonl(&out.join("diagnostics.jsonl"), std::slice::from_ref(&round))?;
    println!(
        "plan: {} iterations, residual {:.3e} (floor {:.3e}), outputs in {}",
        round.iterations,
        round.final_residual,
        round.residual_floor,
        out.display()
    );
    Ok(())
}

/// `run`: the full closed loop (sequential conditioning without execution
/// for the synthetic task); writes trajectory, diagnostics, posterior and
/// the self-contained run record.
pub fn cmd_run(config_path: &Path, out: &Path) -> Result<(), CmdError> {
    let loaded = load_config(config_path)?;
    init_threads(loaded.threads);
    ensure_out_dir(out)?;
    let started = Instant::now();
    let eta_init = loaded.initial_policy().to_natural();

    let (rounds, executed, aborted): (Vec<RoundResult>, io::ExecutedTrajectory, Option<usize>) =
        match &loaded.task.model {
            TaskModel::Synthetic { q, b } => {
                let cost =
                    QuadraticCost::new(q.clone(), b.clone()).map_err(anyhow::Error::from)?;
                let param = window(&loaded, 0.0)?;
                let rounds = run_rounds(&loaded.mpc, &cost, &param, &eta_init)
                    .map_err(anyhow::Error::from)?;
                io::write_empty_trajectory_csv(&out.join("trajectory.csv"))?;
                (rounds, io::ExecutedTrajectory::default(), None)
            }
            _ => {
                let model = loaded.task.dynamics().expect("dynamics task");
                let cost_spec = loaded.build_cost_spec().expect("dynamics task has a cost");
                let perturbed;
                let exec_model: Option<&dyn blmpc::rollout::DynamicsModel> =
                    if loaded.exec_model_scale != 1.0 {
                        perturbed = ScaledDynamics {
                            inner: model,
                            scale: loaded.exec_model_scale,
                        };
                        Some(&perturbed)
                    } else {
                        None
                    };
                let result = run_closed_loop(
                    &loaded.mpc,
                    model,
                    exec_model,
                    &cost_spec,
                    &loaded.task.initial_state,
                    loaded.task.control_bounds.as_deref(),
                    &eta_init,
                )
                .map_err(anyhow::Error::from)?;
                io::write_trajectory_csv(
                    &out.join("trajectory.csv"),
                    &result,
                    &cost_spec,
                    loaded.mpc.exec_steps(),
                    loaded.task.state_dim(),
                    loaded.task.control_dim(),
                )?;
                let executed = io::ExecutedTrajectory {
                    times: result.times.clone(),
                    states: result.states.iter().map(|s| s.iter().copied().collect()).collect(),
                    controls: result
                        .controls
                        .iter()
                        .map(|u| u.iter().copied().collect())
                        .collect(),
                };
                (result.rounds, executed, result.aborted_round)
            }
        };

    io::write_diagnostics_jsonl(&out.join("diagnostics.jsonl"), &rounds)?;
    let last = rounds.last().expect("at least one round");
    io::write_posterior(&out.join("posterior.json"), &last.posterior)?;
    let record = io::RunRecord {
        version: env!("CARGO_PKG_VERSION").to_string(),
        task_id: loaded.task.id.to_string(),
        seed: loaded.mpc.seed,
        threads: loaded.threads,
        config_toml: loaded.resolved_toml(),
        rounds: rounds
            .iter()
            .enumerate()
            .map(|(j, r)| io::RoundRecord::from_round(j, r))
            .collect(),
        executed,
        aborted_round: aborted,
        total_wall_ms: started.elapsed().as_millis(),
    };
    io::write_run_record(&out.join("run_record.json"), &record)?;

    match aborted {
        Some(j) => println!(
            "run: aborted in round {j} (execution diverged); partial outputs in {}",
            out.display()
        ),
        None => println!(
            "run: {} round(s), final residual {:.3e}, outputs in {}",
            rounds.len(),
            last.final_residual,
            out.display()
        ),
    }
    Ok(())
}

/// `oracle`: exact posteriors for the synthetic quadratic cost under the
/// configured initial policy as the prior.
pub fn cmd_oracle(config_path: &Path, out: &Path) -> Result<(), CmdError> {
    let loaded = load_config(config_path)?;
    init_threads(loaded.threads);
    let TaskModel::Synthetic { q, b } = &loaded.task.model else {
        return Err(CmdError::Config(ConfigError::Invalid {
            key: "task.id".to_string(),
            reason: "the oracle command needs the quadratic_synthetic task".to_string(),
        }));
    };
    ensure_out_dir(out)?;
    let prior = loaded.initial_policy();
    let d = prior.dim();

    let analytic = analytic_quadratic_posterior(&prior, q, b).map_err(anyhow::Error::from)?;

    let cost_q = q.clone();
    let cost_b = b.clone();
    let cost = move |theta: &DVector<f64>| 0.5 * theta.dot(&(&cost_q * theta)) + cost_b.dot(theta);

    let quadrature = if d <= 2 {
        let precision = prior.precision();
        let prior_mean = prior.mean().clone();
        let reg = move |theta: &DVector<f64>| {
            let diff = theta - &prior_mean;
            0.5 * diff.dot(&(&precision * &diff))
        };
        let cov = prior.covariance();
        let bounds: Vec<(f64, f64)> = (0..d)
            .map(|i| {
                let sigma = cov[(i, i)].sqrt();
                (prior.mean()[i] - 12.0 * sigma, prior.mean()[i] + 12.0 * sigma)
            })
            .collect();
        let counts = if d == 1 { vec![16001] } else { vec![801, 801] };
        let grid = QuadratureGrid::new(bounds, counts).map_err(anyhow::Error::from)?;
        let quad = quadrature_posterior(&cost, &reg, &grid).map_err(anyhow::Error::from)?;
        Some(io::QuadratureOutput {
            z: quad.z,
            objective: quad.objective,
            mean: quad.mean.iter().copied().collect(),
            cov: (0..d).map(|i| (0..d).map(|j| quad.cov[(i, j)]).collect()).collect(),
        })
    } else {
        None
    };

    let ensemble = ParticleEnsemble::from_policy(
        &prior,
        PARTICLE_ORACLE_COUNT,
        derive_seed(loaded.mpc.seed, 0xac1e, 0),
    )
    .map_err(anyhow::Error::from)?;
    let update = particle_sequential_update(&ensemble, &cost).map_err(anyhow::Error::from)?;
    let p_mean = update.ensemble.weighted_mean();
    let p_cov = update.ensemble.weighted_cov();

    let oracle = io::OracleFile {
        analytic: io::moments(analytic.mean(), &analytic.covariance()),
        quadrature,
        particle: io::ParticleOutput {
            count: PARTICLE_ORACLE_COUNT,
            ess: update.ensemble.ess(),
            neg_log_z: update.neg_log_z,
            mean: p_mean.iter().copied().collect(),
            cov: (0..d).map(|i| (0..d).map(|j| p_cov[(i, j)]).collect()).collect(),
        },
    };
    io::write_oracle(&out.join("oracle.json"), &oracle)?;
    println!(
        "oracle: analytic/quadrature/particle posteriors written to {}",
        out.display()
    );
    Ok(())
}

/// `validate`: run the property suites and fail on any unsatisfied check.
pub fn cmd_validate(suite: Option<&str>) -> Result<(), CmdError> {
    let results = crate::suites::run_suites(suite).map_err(|e| {
        CmdError::Config(ConfigError::Invalid {
            key: "--suite".to_string(),
            reason: e.to_string(),
        })
    })?;
    let mut failures = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {} — {}", r.suite, r.name, r.detail);
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CmdError::Validation { failures });
    }
    println!("all {} checks passed", results.len());
    Ok(())
}
