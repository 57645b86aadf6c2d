//! Result persistence. CSV for trajectories (one row per executed step
//! plus a terminal row), line-delimited JSON for per-iteration
//! diagnostics, and a self-contained JSON run record embedding the
//! resolved configuration. Timing lives only in the run record, so every
//! other artifact is byte-reproducible for a fixed seed.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use blmpc::cost::CostSpec;
use blmpc::engine::{ClosedLoopResult, RoundResult};
use blmpc::policy::GaussianPolicy;
use blmpc::rollout::ControlParameterization;

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorFile {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub eta1: Vec<f64>,
    pub eta2: Vec<Vec<f64>>,
}

impl PosteriorFile {
    pub fn from_policy(policy: &GaussianPolicy) -> Self {
        let eta = policy.to_natural();
        PosteriorFile {
            mean: policy.mean().iter().copied().collect(),
            covariance: matrix_rows(&policy.covariance()),
            eta1: eta.eta1().iter().copied().collect(),
            eta2: matrix_rows(eta.eta2()),
        }
    }
}

pub fn write_posterior(path: &Path, policy: &GaussianPolicy) -> anyhow::Result<()> {
    let file = PosteriorFile::from_policy(policy);
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_posterior(path: &Path) -> anyhow::Result<PosteriorFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Planned control decoded from the posterior mean over the full horizon:
/// columns `step, time, u0..`.
pub fn write_planned_control_csv(
    path: &Path,
    param: &ControlParameterization,
    mean: &DVector<f64>,
    steps: usize,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((0..param.control_dim()).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    let h = param.horizon() / steps as f64;
    for s in 0..steps {
        let tau = param.t_start() + s as f64 * h;
        let u = param.decode(mean, tau)?;
        let mut row = vec![s.to_string(), format_f64(tau)];
        row.extend(u.iter().map(|v| format_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn format_f64(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

// Shortest round-trip formatting (std's f64 Display).
fn ryu_like(v: f64) -> String {
    format!("{v}")
}

/// Executed trajectory: `round, step, time, x0.., u0.., stage_cost`. One
/// row per executed step at its start, plus a terminal row carrying the
/// final state (the last control repeats there).
pub fn write_trajectory_csv(
    path: &Path,
    result: &ClosedLoopResult,
    cost_spec: &CostSpec,
    exec_steps_per_round: usize,
    state_dim: usize,
    control_dim: usize,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["round".to_string(), "step".to_string(), "time".to_string()];
    header.extend((0..state_dim).map(|i| format!("x{i}")));
    header.extend((0..control_dim).map(|i| format!("u{i}")));
    header.push("stage_cost".to_string());
    w.write_record(&header)?;

    let n_controls = result.controls.len();
    for s in 0..n_controls {
        let round = s / exec_steps_per_round;
        let step = s % exec_steps_per_round;
        write_traj_row(
            &mut w,
            round,
            step,
            result.times[s],
            &result.states[s],
            &result.controls[s],
            cost_spec,
        )?;
    }
    if n_controls > 0 {
        // Terminal row: the state the loop ended in.
        let last = n_controls;
        write_traj_row(
            &mut w,
            (last - 1) / exec_steps_per_round,
            exec_steps_per_round,
            result.times[last],
            &result.states[last],
            &result.controls[last - 1],
            cost_spec,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Header-only trajectory file for tasks without a plant (synthetic).
pub fn write_empty_trajectory_csv(path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "step", "time"])?;
    w.flush()?;
    Ok(())
}

fn write_traj_row(
    w: &mut csv::Writer<fs::File>,
    round: usize,
    step: usize,
    time: f64,
    state: &DVector<f64>,
    control: &DVector<f64>,
    cost_spec: &CostSpec,
) -> anyhow::Result<()> {
    let stage = (cost_spec.running)(time, state, control);
    let mut row = vec![round.to_string(), step.to_string(), format_f64(time)];
    row.extend(state.iter().map(|v| format_f64(*v)));
    row.extend(control.iter().map(|v| format_f64(*v)));
    row.push(format_f64(stage));
    w.write_record(&row)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticLine {
    Iteration {
        round: usize,
        iter: usize,
        objective: f64,
        gamma: f64,
    },
    Round {
        round: usize,
        iterations: usize,
        final_residual: f64,
        residual_floor: f64,
        divergence_warning: bool,
        log_objective_fallbacks: usize,
    },
}

/// One JSON object per line: every iteration's objective and learning
/// rate, then the round summary. No timing fields.
pub fn write_diagnostics_jsonl(path: &Path, rounds: &[RoundResult]) -> anyhow::Result<()> {
    let mut out = fs::File::create(path)?;
    for (j, round) in rounds.iter().enumerate() {
        for (k, (objective, gamma)) in round
            .objective_trace
            .iter()
            .zip(&round.gamma_trace)
            .enumerate()
        {
            let line = DiagnosticLine::Iteration {
                round: j,
                iter: k,
                objective: *objective,
                gamma: *gamma,
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        let line = DiagnosticLine::Round {
            round: j,
            iterations: round.iterations,
            final_residual: round.final_residual,
            residual_floor: round.residual_floor,
            divergence_warning: round.divergence_warning,
            log_objective_fallbacks: round.log_objective_fallbacks,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub iterations: usize,
    pub final_residual: f64,
    pub residual_floor: f64,
    pub objective_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
    pub divergence_warning: bool,
    pub log_objective_fallbacks: usize,
    pub posterior_mean: Vec<f64>,
    pub posterior_cov: Vec<Vec<f64>>,
    /// Wall time; excluded from reproducibility comparisons.
    pub wall_ms: u128,
}

impl RoundRecord {
    pub fn from_round(round: usize, r: &RoundResult) -> Self {
        RoundRecord {
            round,
            iterations: r.iterations,
            final_residual: r.final_residual,
            residual_floor: r.residual_floor,
            objective_trace: r.objective_trace.clone(),
            gamma_trace: r.gamma_trace.clone(),
            divergence_warning: r.divergence_warning,
            log_objective_fallbacks: r.log_objective_fallbacks,
            posterior_mean: r.posterior.mean().iter().copied().collect(),
            posterior_cov: matrix_rows(&r.posterior.covariance()),
            wall_ms: r.wall_time.as_millis(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExecutedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

/// Self-contained run description: the embedded `config_toml` re-loads to
/// the exact same run (timing fields aside).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub task_id: String,
    pub seed: u64,
    pub threads: usize,
    pub config_toml: String,
    pub rounds: Vec<RoundRecord>,
    pub executed: ExecutedTrajectory,
    pub aborted_round: Option<usize>,
    /// Wall time; excluded from reproducibility comparisons.
    pub total_wall_ms: u128,
}

pub fn write_run_record(path: &Path, record: &RunRecord) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(record)?)?;
    Ok(())
}

pub fn read_run_record(path: &Path) -> anyhow::Result<RunRecord> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Oracle outputs for the synthetic quadratic task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleFile {
    pub analytic: OracleMoments,
    /// Present only for knot dimension ≤ 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureOutput>,
    pub particle: ParticleOutput,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleMoments {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureOutput {
    pub z: f64,
    pub objective: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticleOutput {
    pub count: usize,
    pub ess: f64,
    pub neg_log_z: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

pub fn write_oracle(path: &Path, oracle: &OracleFile) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(oracle)?)?;
    Ok(())
}

pub fn read_oracle(path: &Path) -> anyhow::Result<OracleFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn moments(mean: &DVector<f64>, cov: &nalgebra::DMatrix<f64>) -> OracleMoments {
    OracleMoments {
        mean: mean.iter().copied().collect(),
        cov: matrix_rows(cov),
    }
}
