//! Planning rounds and the receding-horizon closed loop.
//!
//! One round runs the sample → simulate → estimate → step loop from a
//! warm-started prior until the natural parameters stop moving, then
//! decodes the posterior mean as the control to execute. The warm start
//! `Φ` shifts the previous round's knot blocks forward by the replanning
//! shift, replicates the last knot into the vacated slots, and injects
//! fresh variance there; the shifted parameters serve both as the round's
//! initial iterate and as the prior anchoring its objective. The closed
//! loop executes the first `shift` knots of each plan on the plant and
//! feeds the posterior to the next round as its prior.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::blr::{self, EstimatorKind, GradientEstimate, LearningRateSchedule};
use crate::cost::{mean_in_order, CostSpec};
use crate::error::{BlmpcError, Result};
use crate::exec;
use crate::policy::{GaussianPolicy, NaturalParams};
use crate::rng;
use crate::rollout::{self, ControlParameterization, DynamicsModel};

/// Fraction of diverged samples per iteration above which the round is
/// flagged as low quality.
const DIVERGENCE_WARN_FRACTION: f64 = 0.5;

/// Learning-rate halvings allowed per step before the round fails.
const MAX_STEP_HALVINGS: u32 = 10;

/// Total cost of a candidate control-knot vector. For dynamics tasks this
/// wraps a rollout; synthetic tasks evaluate the knots directly.
pub trait ControlCost: Sync {
    fn cost(&self, knots: &DVector<f64>) -> f64;

    /// Cost plus a divergence flag for batch-quality accounting.
    fn cost_flagged(&self, knots: &DVector<f64>) -> (f64, bool) {
        (self.cost(knots), false)
    }
}

/// Rollout-backed planning cost: integrate the model from the round's
/// state and apply the Bolza/utility cost. Diverged rollouts are flagged
/// and charged the divergence penalty.
pub struct RolloutCost<'a> {
    pub model: &'a dyn DynamicsModel,
    pub initial_state: DVector<f64>,
    pub param: ControlParameterization,
    pub cost_spec: &'a CostSpec,
    pub steps: usize,
}

impl ControlCost for RolloutCost<'_> {
    fn cost(&self, knots: &DVector<f64>) -> f64 {
        self.cost_flagged(knots).0
    }

    fn cost_flagged(&self, knots: &DVector<f64>) -> (f64, bool) {
        match rollout::integrate(self.model, &self.initial_state, &self.param, knots, self.steps)
        {
            Ok(traj) => (self.cost_spec.trajectory_cost(&traj), false),
            Err(_) => (self.cost_spec.divergence_penalty, true),
        }
    }
}

/// Tuning for the per-round optimisation and the closed loop.
#[derive(Clone, Debug)]
pub struct MpcConfig {
    /// Planning horizon `T` in seconds.
    pub horizon: f64,
    /// Control knots `K` per horizon.
    pub knots: usize,
    /// Integration steps `S` per horizon; must be a multiple of `K`.
    pub steps: usize,
    /// Monte-Carlo samples `N` per iteration.
    pub samples: usize,
    pub max_iters: usize,
    /// Relative natural-parameter movement below which a round stops.
    pub tol: f64,
    pub schedule: LearningRateSchedule,
    pub estimator: EstimatorKind,
    /// Relative spacing for finite-difference probes.
    pub fd_step: f64,
    /// Normalise steps by the current objective estimate.
    pub log_objective: bool,
    /// Knots executed (and shifted) per round, `1 ≤ shift ≤ K`; the
    /// replanning period is `T/K · shift`.
    pub shift: usize,
    /// Closed-loop rounds `J`.
    pub rounds: usize,
    pub seed: u64,
    /// Eigenvalue floor applied to the posterior covariance after each
    /// round; keeps later rounds exploring.
    pub var_floor: f64,
    /// Variance injected into knot slots vacated by the warm-start shift.
    pub var_inject: f64,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(BlmpcError::invalid("horizon", "must be > 0"));
        }
        if self.knots == 0 {
            return Err(BlmpcError::invalid("knots", "must be >= 1"));
        }
        if self.steps == 0 || self.steps % self.knots != 0 {
            return Err(BlmpcError::invalid(
                "steps",
                format!("steps {} must be a positive multiple of knots {}", self.steps, self.knots),
            ));
        }
        if self.samples == 0 {
            return Err(BlmpcError::invalid("samples", "must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(BlmpcError::invalid("max_iters", "must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(BlmpcError::invalid("tol", "must be > 0"));
        }
        if !(self.fd_step > 0.0) {
            return Err(BlmpcError::invalid("fd_step", "must be > 0"));
        }
        if self.shift == 0 || self.shift > self.knots {
            return Err(BlmpcError::invalid(
                "shift",
                format!("shift {} must lie in 1..={}", self.shift, self.knots),
            ));
        }
        if self.rounds == 0 {
            return Err(BlmpcError::invalid("rounds", "must be >= 1"));
        }
        if !(self.var_floor > 0.0) {
            return Err(BlmpcError::invalid("var_floor", "must be > 0"));
        }
        if !(self.var_inject > 0.0) {
            return Err(BlmpcError::invalid("var_inject", "must be > 0"));
        }
        Ok(())
    }

    /// Replanning period `Δ = T/K · shift`.
    pub fn replan_period(&self) -> f64 {
        self.horizon / self.knots as f64 * self.shift as f64
    }

    /// Integration steps covered by one executed segment.
    pub fn exec_steps(&self) -> usize {
        self.steps / self.knots * self.shift
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Warm-start map `Φ`: shift knot blocks of the mean forward by `shift`,
/// replicate the final knot into the vacated slots, permute the covariance
/// by the same block shift with `var_inject·I` on vacated diagonal blocks
/// and zero coupling elsewhere.
pub fn warm_start_shift(
    eta: &NaturalParams,
    shift: usize,
    knots: usize,
    control_dim: usize,
    var_inject: f64,
) -> Result<NaturalParams> {
    if shift == 0 || shift > knots {
        return Err(BlmpcError::invalid(
            "shift",
            format!("shift {shift} must lie in 1..={knots}"),
        ));
    }
    if !(var_inject > 0.0) {
        return Err(BlmpcError::invalid("var_inject", "must be > 0"));
    }
    let d = knots * control_dim;
    if eta.dim() != d {
        return Err(BlmpcError::DimensionMismatch {
            expected: d,
            got: eta.dim(),
        });
    }
    let policy = GaussianPolicy::from_natural(eta)?;
    let mean = policy.mean();
    let cov = policy.covariance();
    let kept = knots - shift;

    let mut new_mean = DVector::zeros(d);
    for block in 0..knots {
        let src = (block + shift).min(knots - 1);
        for c in 0..control_dim {
            new_mean[block * control_dim + c] = mean[src * control_dim + c];
        }
    }

    let mut new_cov = DMatrix::zeros(d, d);
    for bi in 0..knots {
        for bj in 0..knots {
            if bi < kept && bj < kept {
                for ci in 0..control_dim {
                    for cj in 0..control_dim {
                        new_cov[(bi * control_dim + ci, bj * control_dim + cj)] = cov[(
                            (bi + shift) * control_dim + ci,
                            (bj + shift) * control_dim + cj,
                        )];
                    }
                }
            } else if bi == bj {
                for c in 0..control_dim {
                    new_cov[(bi * control_dim + c, bi * control_dim + c)] = var_inject;
                }
            }
        }
    }

    Ok(GaussianPolicy::new(new_mean, new_cov)?.to_natural())
}

/// Clamp the covariance eigenvalues from below, preventing policy
/// collapse between rounds.
pub fn floor_covariance(policy: &GaussianPolicy, var_floor: f64) -> Result<GaussianPolicy> {
    if !(var_floor > 0.0) {
        return Err(BlmpcError::invalid("var_floor", "must be > 0"));
    }
    let eig = policy.covariance().symmetric_eigen();
    if eig.eigenvalues.iter().all(|l| *l >= var_floor) {
        return Ok(policy.clone());
    }
    let clamped = DVector::from_fn(policy.dim(), |i, _| eig.eigenvalues[i].max(var_floor));
    let cov = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    GaussianPolicy::new(policy.mean().clone(), cov)
}

/// Outcome of one planning round.
#[derive(Clone, Debug)]
pub struct RoundResult {
    pub posterior: GaussianPolicy,
    pub posterior_natural: NaturalParams,
    /// Step-start times of the executed segment.
    pub executed_times: Vec<f64>,
    /// Decoded posterior-mean control over the executed segment.
    pub executed_controls: Vec<DVector<f64>>,
    pub iterations: usize,
    pub final_residual: f64,
    /// Standard-error magnitude of the final gradient estimate; the noise
    /// floor under the residual.
    pub residual_floor: f64,
    /// Monte-Carlo Bayesian objective (expected cost + KL to the round
    /// prior) per iteration.
    pub objective_trace: Vec<f64>,
    /// Learning rate actually used per iteration (after safeguarding).
    pub gamma_trace: Vec<f64>,
    pub divergence_warning: bool,
    pub log_objective_fallbacks: usize,
    pub wall_time: Duration,
}

fn estimate_for_iteration(
    thetas: &[DVector<f64>],
    costs: &[f64],
    policy: &GaussianPolicy,
    config: &MpcConfig,
    cost: &dyn ControlCost,
) -> Result<GradientEstimate> {
    blr::estimate_gradients(
        thetas,
        costs,
        policy,
        config.estimator,
        &|theta: &DVector<f64>| cost.cost(theta),
        config.fd_step,
    )
}

/// One planning round: warm-start the prior, iterate the natural-gradient
/// update on Monte-Carlo gradients until the parameters settle, and decode
/// the executed control segment from the posterior mean.
pub fn plan_round(
    config: &MpcConfig,
    cost: &dyn ControlCost,
    param: &ControlParameterization,
    eta_prior: &NaturalParams,
    round_index: usize,
) -> Result<RoundResult> {
    config.validate()?;
    let d = param.knot_dim();
    if eta_prior.dim() != d {
        return Err(BlmpcError::DimensionMismatch {
            expected: d,
            got: eta_prior.dim(),
        });
    }
    if param.knots() != config.knots {
        return Err(BlmpcError::invalid(
            "param",
            format!("parameterization has {} knots, config {}", param.knots(), config.knots),
        ));
    }
    let started = Instant::now();

    // Φ(η_prior) is both the initial iterate and the anchor of the round's
    // KL term: the previous posterior expressed in this window's knots.
    let anchor =
        warm_start_shift(eta_prior, config.shift, config.knots, param.control_dim(), config.var_inject)?;
    let anchor_policy = GaussianPolicy::from_natural(&anchor)?;

    let mut eta = anchor.clone();
    let mut policy = anchor_policy.clone();
    let mut objective_trace = Vec::new();
    let mut gamma_trace = Vec::new();
    let mut divergence_warning = false;
    let mut log_objective_fallbacks = 0usize;
    let mut final_residual = f64::INFINITY;
    let mut residual_floor = 0.0;
    let mut iterations = 0usize;

    for k in 0..config.max_iters {
        let seed_k = rng::derive_seed(config.seed, round_index as u64, k as u64);
        let thetas = policy.sample(config.samples, seed_k);
        let flagged_costs: Vec<(f64, bool)> =
            exec::map_indexed(&thetas, |_, theta| cost.cost_flagged(theta));
        let costs: Vec<f64> = flagged_costs.iter().map(|(c, _)| *c).collect();
        let diverged = flagged_costs.iter().filter(|(_, f)| *f).count();
        if diverged as f64 > DIVERGENCE_WARN_FRACTION * config.samples as f64 {
            divergence_warning = true;
            log::warn!(
                "round {round_index} iteration {k}: {diverged}/{} rollouts diverged",
                config.samples
            );
        }

        let est = estimate_for_iteration(&thetas, &costs, &policy, config, cost)?;
        let grad = blr::chain_rule_grads(&est.grad_mean, &est.grad_cov, policy.mean());

        let expected = mean_in_order(&costs)?;
        let objective = expected + policy.kl_divergence(&anchor_policy)?;
        objective_trace.push(objective);

        let step_grad = if config.log_objective {
            if objective > 0.0 {
                grad.scaled(1.0 / objective)
            } else {
                log_objective_fallbacks += 1;
                grad.clone()
            }
        } else {
            grad.clone()
        };

        let gamma = config.schedule.gamma(k);
        let (eta_next, used_gamma) =
            blr::natural_blr_step_safeguarded(&eta, &anchor, &step_grad, gamma, MAX_STEP_HALVINGS)?;
        gamma_trace.push(used_gamma);

        final_residual = blr::optimality_residual(&eta_next, &anchor, &grad);
        residual_floor = blr::gradient_noise_floor(&est, policy.mean());

        let delta = eta_next.stacked_distance(&eta) / (1.0 + eta.stacked_norm());
        eta = eta_next;
        policy = GaussianPolicy::from_natural(&eta)?;
        iterations = k + 1;
        if delta <= config.tol {
            break;
        }
    }

    let h = param.horizon() / config.steps as f64;
    let exec_steps = config.exec_steps();
    let mut executed_times = Vec::with_capacity(exec_steps);
    let mut executed_controls = Vec::with_capacity(exec_steps);
    for s in 0..exec_steps {
        let tau = param.t_start() + s as f64 * h;
        executed_times.push(tau);
        executed_controls.push(param.decode(policy.mean(), tau)?);
    }

    Ok(RoundResult {
        posterior: policy,
        posterior_natural: eta,
        executed_times,
        executed_controls,
        iterations,
        final_residual,
        residual_floor,
        objective_trace,
        gamma_trace,
        divergence_warning,
        log_objective_fallbacks,
        wall_time: started.elapsed(),
    })
}

/// Sequential rounds on a fixed window without plant execution: each
/// posterior (variance-floored) becomes the next round's prior. Used for
/// synthetic tasks whose cost does not depend on a state.
pub fn run_rounds(
    config: &MpcConfig,
    cost: &dyn ControlCost,
    param: &ControlParameterization,
    eta_init: &NaturalParams,
) -> Result<Vec<RoundResult>> {
    config.validate()?;
    let mut prior = eta_init.clone();
    let mut rounds = Vec::with_capacity(config.rounds);
    for j in 0..config.rounds {
        let mut round = plan_round(config, cost, param, &prior, j)?;
        let floored = floor_covariance(&round.posterior, config.var_floor)?;
        round.posterior_natural = floored.to_natural();
        round.posterior = floored;
        prior = round.posterior_natural.clone();
        rounds.push(round);
    }
    Ok(rounds)
}

/// Full receding-horizon history.
#[derive(Clone, Debug)]
pub struct ClosedLoopResult {
    pub rounds: Vec<RoundResult>,
    /// Executed grid: `rounds·exec_steps + 1` instants.
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Control applied on each executed step.
    pub controls: Vec<DVector<f64>>,
    /// Round whose execution diverged, if the loop aborted early.
    pub aborted_round: Option<usize>,
}

impl ClosedLoopResult {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("closed loop records the initial state")
    }
}

/// Run `rounds` planning rounds, executing the posterior-mean control for
/// one replanning period each on `exec_model` (the plant; defaults to the
/// planning model). Posteriors are variance-floored before being recorded
/// and passed on as the next prior. Execution divergence stops the loop
/// and returns the partial history.
pub fn run_closed_loop(
    config: &MpcConfig,
    model: &dyn DynamicsModel,
    exec_model: Option<&dyn DynamicsModel>,
    cost_spec: &CostSpec,
    initial_state: &DVector<f64>,
    control_bounds: Option<&[(f64, f64)]>,
    eta_init: &NaturalParams,
) -> Result<ClosedLoopResult> {
    config.validate()?;
    let plant = exec_model.unwrap_or(model);
    if initial_state.len() != model.state_dim() {
        return Err(BlmpcError::DimensionMismatch {
            expected: model.state_dim(),
            got: initial_state.len(),
        });
    }
    let control_dim = model.control_dim();
    let delta = config.replan_period();
    let h = config.step_size();
    let exec_steps = config.exec_steps();

    let mut eta_prior = eta_init.clone();
    let mut state = initial_state.clone();
    let mut result = ClosedLoopResult {
        rounds: Vec::with_capacity(config.rounds),
        times: vec![0.0],
        states: vec![state.clone()],
        controls: Vec::new(),
        aborted_round: None,
    };

    for j in 0..config.rounds {
        let t_j = j as f64 * delta;
        let param = ControlParameterization::new(
            t_j,
            t_j + config.horizon,
            config.knots,
            control_dim,
            control_bounds.map(|b| b.to_vec()),
        )?;
        let cost = RolloutCost {
            model,
            initial_state: state.clone(),
            param: param.clone(),
            cost_spec,
            steps: config.steps,
        };
        let mut round = plan_round(config, &cost, &param, &eta_prior, j)?;
        let floored = floor_covariance(&round.posterior, config.var_floor)?;
        round.posterior_natural = floored.to_natural();
        round.posterior = floored;

        let mut diverged = false;
        for s in 0..exec_steps {
            let tau = t_j + s as f64 * h;
            let u = &round.executed_controls[s];
            state = rollout::rk4_step(plant, tau, &state, u, h);
            if state.iter().any(|v| !v.is_finite()) {
                log::error!("execution diverged in round {j} at step {s}");
                diverged = true;
                break;
            }
            result.controls.push(u.clone());
            result.times.push(tau + h);
            result.states.push(state.clone());
        }

        eta_prior = round.posterior_natural.clone();
        result.rounds.push(round);
        if diverged {
            result.aborted_round = Some(j);
            break;
        }
    }
    Ok(result)
}
