//! Control decoding and forward simulation.
//!
//! A control-knot vector is decoded as a zero-order hold: the horizon is
//! split into `K` equal knot intervals and the knot's sub-vector is held
//! constant (and clamped to bounds) over its interval. Trajectories come
//! from classical fixed-step RK4 with the control evaluated at the step
//! start for all four stages, so the simulated control function is exactly
//! the sampled piecewise-constant one. The step count must be a multiple of
//! the knot count, which aligns knot boundaries with step boundaries.

use nalgebra::DVector;

use crate::cost::CostSpec;
use crate::error::{BlmpcError, Result};
use crate::exec;

/// Deterministic, side-effect-free vector field `ẋ = f(τ, x, u)`.
///
/// Implementations must be reentrant: batch members are evaluated
/// concurrently.
pub trait DynamicsModel: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn derivative(&self, tau: f64, state: &DVector<f64>, control: &DVector<f64>) -> DVector<f64>;
}

/// Zero-order-hold decoding of a knot vector onto a planning window.
#[derive(Clone, Debug)]
pub struct ControlParameterization {
    t_start: f64,
    t_end: f64,
    knots: usize,
    control_dim: usize,
    bounds: Option<Vec<(f64, f64)>>,
}

impl ControlParameterization {
    pub fn new(
        t_start: f64,
        t_end: f64,
        knots: usize,
        control_dim: usize,
        bounds: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(BlmpcError::invalid(
                "t_end",
                format!("horizon end {t_end} must exceed start {t_start}"),
            ));
        }
        if knots == 0 {
            return Err(BlmpcError::invalid("knots", "knot count must be >= 1"));
        }
        if control_dim == 0 {
            return Err(BlmpcError::invalid("control_dim", "control dimension must be >= 1"));
        }
        if let Some(b) = &bounds {
            if b.len() != control_dim {
                return Err(BlmpcError::DimensionMismatch {
                    expected: control_dim,
                    got: b.len(),
                });
            }
            for (lo, hi) in b {
                if !(lo <= hi) {
                    return Err(BlmpcError::invalid(
                        "bounds",
                        format!("bounds must be ordered, got [{lo}, {hi}]"),
                    ));
                }
            }
        }
        Ok(Self {
            t_start,
            t_end,
            knots,
            control_dim,
            bounds,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    /// Dimension of the flattened knot vector: `control_dim * knots`.
    pub fn knot_dim(&self) -> usize {
        self.control_dim * self.knots
    }

    pub fn knot_duration(&self) -> f64 {
        self.horizon() / self.knots as f64
    }

    /// Control value at `tau`: hold the enclosing knot's sub-vector,
    /// clamped to the per-channel bounds.
    pub fn decode(&self, knots: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
        if knots.len() != self.knot_dim() {
            return Err(BlmpcError::DimensionMismatch {
                expected: self.knot_dim(),
                got: knots.len(),
            });
        }
        if tau < self.t_start || tau > self.t_end {
            return Err(BlmpcError::OutsideHorizon {
                tau,
                start: self.t_start,
                end: self.t_end,
            });
        }
        let idx = (((tau - self.t_start) / self.knot_duration()) as usize).min(self.knots - 1);
        let mut u = knots.rows(idx * self.control_dim, self.control_dim).into_owned();
        if let Some(bounds) = &self.bounds {
            for (v, (lo, hi)) in u.iter_mut().zip(bounds) {
                *v = v.clamp(*lo, *hi);
            }
        }
        Ok(u)
    }
}

/// Predicted state-control trajectory on a uniform grid: `S+1` states and
/// `S` per-step controls.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn step_size(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }
}

pub(crate) fn rk4_step(
    model: &dyn DynamicsModel,
    tau: f64,
    state: &DVector<f64>,
    control: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let k1 = model.derivative(tau, state, control);
    let k2 = model.derivative(tau + 0.5 * h, &(state + &k1 * (0.5 * h)), control);
    let k3 = model.derivative(tau + 0.5 * h, &(state + &k2 * (0.5 * h)), control);
    let k4 = model.derivative(tau + h, &(state + &k3 * h), control);
    state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrate the model over the planning window with `steps` fixed RK4
/// steps, holding the decoded control constant within each step.
pub fn integrate(
    model: &dyn DynamicsModel,
    initial_state: &DVector<f64>,
    param: &ControlParameterization,
    knots: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(BlmpcError::invalid("steps", "step count must be >= 1"));
    }
    if steps % param.knots() != 0 {
        return Err(BlmpcError::invalid(
            "steps",
            format!("step count {steps} must be a multiple of knot count {}", param.knots()),
        ));
    }
    if initial_state.len() != model.state_dim() {
        return Err(BlmpcError::DimensionMismatch {
            expected: model.state_dim(),
            got: initial_state.len(),
        });
    }
    let h = param.horizon() / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    times.push(param.t_start());
    states.push(initial_state.clone());

    let mut state = initial_state.clone();
    for s in 0..steps {
        let tau = param.t_start() + s as f64 * h;
        let u = param.decode(knots, tau)?;
        state = rk4_step(model, tau, &state, &u, h);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(BlmpcError::RolloutDiverged { step: s });
        }
        controls.push(u);
        times.push(param.t_start() + (s + 1) as f64 * h);
        states.push(state.clone());
    }
    Ok(Trajectory {
        times,
        states,
        controls,
    })
}

/// One simulated sample: the knot vector, its trajectory (absent when the
/// rollout diverged), and its cost.
#[derive(Clone, Debug)]
pub struct RolloutRecord {
    pub knots: DVector<f64>,
    pub trajectory: Option<Trajectory>,
    pub cost: f64,
    pub diverged: bool,
}

/// The dataset of one sampling pass: records in input order.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub records: Vec<RolloutRecord>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn diverged_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.diverged).count() as f64 / self.records.len() as f64
    }
}

/// Simulate and cost every knot vector. Member order is preserved and each
/// record is computed independently, so the result does not depend on the
/// execution schedule. A diverging sample becomes a flagged record carrying
/// the configured divergence penalty instead of failing the batch.
pub fn rollout_batch(
    model: &dyn DynamicsModel,
    initial_state: &DVector<f64>,
    param: &ControlParameterization,
    knot_vectors: &[DVector<f64>],
    cost_spec: &CostSpec,
    steps: usize,
) -> Result<RolloutBatch> {
    let dim = param.knot_dim();
    if let Some(bad) = knot_vectors.iter().find(|k| k.len() != dim) {
        return Err(BlmpcError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let records = exec::map_indexed(knot_vectors, |_, knots| {
        match integrate(model, initial_state, param, knots, steps) {
            Ok(traj) => {
                let cost = cost_spec.trajectory_cost(&traj);
                RolloutRecord {
                    knots: knots.clone(),
                    trajectory: Some(traj),
                    cost,
                    diverged: false,
                }
            }
            Err(_) => RolloutRecord {
                knots: knots.clone(),
                trajectory: None,
                cost: cost_spec.divergence_penalty,
                diverged: true,
            },
        }
    });
    Ok(RolloutBatch { records })
}
