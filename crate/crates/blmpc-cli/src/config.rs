//! Configuration ingestion: a single TOML document with `[task]`, `[cost]`
//! and `[mpc]` tables. Every key is optional except `task.id`; defaults
//! are documented in the shipped `configs/*.toml` files and in the README.
//! Unknown keys, inapplicable keys for the chosen task, and invariant
//! violations are all rejected with the offending key path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use blmpc::blr::{DecayRule, EstimatorKind, LearningRateSchedule};
use blmpc::cost::{CostSpec, UtilityVariant};
use blmpc::engine::MpcConfig;
use blmpc::rollout::DynamicsModel;
use blmpc::tasks::{CartPole, DoubleIntegrator, Pendulum};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    DoubleIntegrator,
    Pendulum,
    Cartpole,
    QuadraticSynthetic,
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskId::DoubleIntegrator => "double_integrator",
            TaskId::Pendulum => "pendulum",
            TaskId::Cartpole => "cartpole",
            TaskId::QuadraticSynthetic => "quadratic_synthetic",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityChoice {
    Negated,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    BonnetPriceFd,
    ScoreFunction,
    GaussNewton,
}

impl From<EstimatorChoice> for EstimatorKind {
    fn from(c: EstimatorChoice) -> Self {
        match c {
            EstimatorChoice::BonnetPriceFd => EstimatorKind::BonnetPriceFD,
            EstimatorChoice::ScoreFunction => EstimatorKind::ScoreFunction,
            EstimatorChoice::GaussNewton => EstimatorKind::GaussNewton,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayChoice {
    Constant,
    Harmonic,
}

impl From<DecayChoice> for DecayRule {
    fn from(c: DecayChoice) -> Self {
        match c {
            DecayChoice::Constant => DecayRule::Constant,
            DecayChoice::Harmonic => DecayRule::Harmonic,
        }
    }
}

/// The on-disk schema. Loading fills every applicable `None` with the
/// task's default, so a serialized `FileConfig` re-loads to itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: TaskSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub mpc: MpcSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub id: TaskId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_bounds: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_box: Option<Vec<[f64; 2]>>,
    // Pendulum parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    // Cart-pole parameters (gravity shared with pendulum).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cart_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_half_length: Option<f64>,
    // Synthetic quadratic cost.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_diag: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            id: TaskId::DoubleIntegrator,
            initial_state: None,
            control_bounds: None,
            state_box: None,
            mass: None,
            length: None,
            gravity: None,
            damping: None,
            cart_mass: None,
            pole_mass: None,
            pole_half_length: None,
            q_diag: None,
            b: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_weight: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_weight: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_weight: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_state: Option<Vec<f64>>,
}

impl CostSection {
    fn any_set(&self) -> Option<&'static str> {
        if self.utility.is_some() {
            Some("cost.utility")
        } else if self.lambda.is_some() {
            Some("cost.lambda")
        } else if self.divergence_penalty.is_some() {
            Some("cost.divergence_penalty")
        } else if self.state_weight.is_some() {
            Some("cost.state_weight")
        } else if self.control_weight.is_some() {
            Some("cost.control_weight")
        } else if self.terminal_weight.is_some() {
            Some("cost.terminal_weight")
        } else if self.goal_state.is_some() {
            Some("cost.goal_state")
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_decay: Option<DecayChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_objective: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_inject: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exec_model_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// Resolved task: model (if any), dimensions, boxes.
#[derive(Clone, Debug)]
pub enum TaskModel {
    DoubleIntegrator(DoubleIntegrator),
    Pendulum(Pendulum),
    CartPole(CartPole),
    Synthetic { q: DMatrix<f64>, b: DVector<f64> },
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub id: TaskId,
    pub model: TaskModel,
    pub initial_state: DVector<f64>,
    pub control_bounds: Option<Vec<(f64, f64)>>,
    pub state_box: Option<Vec<(f64, f64)>>,
}

impl TaskSpec {
    pub fn dynamics(&self) -> Option<&dyn DynamicsModel> {
        match &self.model {
            TaskModel::DoubleIntegrator(m) => Some(m),
            TaskModel::Pendulum(m) => Some(m),
            TaskModel::CartPole(m) => Some(m),
            TaskModel::Synthetic { .. } => None,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.model, TaskModel::Synthetic { .. })
    }

    pub fn state_dim(&self) -> usize {
        match &self.model {
            TaskModel::Synthetic { .. } => 0,
            _ => self.dynamics().unwrap().state_dim(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match &self.model {
            TaskModel::Synthetic { .. } => 1,
            _ => self.dynamics().unwrap().control_dim(),
        }
    }
}

/// Quadratic state/control cost weights resolved against the task.
#[derive(Clone, Debug)]
pub struct CostParams {
    pub utility: UtilityVariant,
    pub divergence_penalty: f64,
    pub state_weight: DVector<f64>,
    pub control_weight: DVector<f64>,
    pub terminal_weight: DVector<f64>,
    pub goal_state: DVector<f64>,
}

impl CostParams {
    /// Materialise the Bolza cost
    /// `L = (x−g)ᵀW_s(x−g) + uᵀW_u u`, `φ = (x−g)ᵀW_t(x−g)`.
    pub fn build(&self) -> CostSpec {
        let goal = self.goal_state.clone();
        let sw = self.state_weight.clone();
        let tw = self.terminal_weight.clone();
        let cw = self.control_weight.clone();
        let goal_t = goal.clone();
        CostSpec::new(
            Box::new(move |x: &DVector<f64>| {
                let diff = x - &goal_t;
                diff.iter().zip(tw.iter()).map(|(d, w)| w * d * d).sum()
            }),
            Box::new(move |_t, x: &DVector<f64>, u: &DVector<f64>| {
                let diff = x - &goal;
                let state: f64 = diff.iter().zip(sw.iter()).map(|(d, w)| w * d * d).sum();
                let ctrl: f64 = u.iter().zip(cw.iter()).map(|(v, w)| w * v * v).sum();
                state + ctrl
            }),
            self.utility,
            self.divergence_penalty,
        )
        .expect("validated on load")
    }
}

/// Everything a command needs, resolved and validated.
#[derive(Debug)]
pub struct LoadedConfig {
    /// Fully-filled config; serializing it reproduces this run's inputs.
    pub file: FileConfig,
    pub mpc: MpcConfig,
    pub task: TaskSpec,
    /// `None` for the synthetic task, whose cost lives in `task.model`.
    pub cost: Option<CostParams>,
    pub exec_model_scale: f64,
    pub threads: usize,
}

impl LoadedConfig {
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(&self.file).expect("config serializes")
    }

    pub fn build_cost_spec(&self) -> Option<CostSpec> {
        self.cost.as_ref().map(|c| c.build())
    }

    /// Initial policy `N(init_mean·1, init_var·I)` over the knot vector.
    pub fn initial_policy(&self) -> blmpc::GaussianPolicy {
        let d = self.mpc.knots * self.task.control_dim();
        let mean = DVector::from_element(d, self.file.mpc.init_mean.expect("resolved"));
        blmpc::GaussianPolicy::isotropic(mean, self.file.mpc.init_var.expect("resolved"))
            .expect("validated on load")
    }
}

/// Task-specific defaults. These are the documented baseline
/// configurations; see `configs/` for the same values as files.
pub fn default_config(id: TaskId) -> FileConfig {
    let mut cfg = FileConfig {
        task: TaskSection {
            id,
            ..TaskSection::default()
        },
        cost: CostSection::default(),
        mpc: MpcSection::default(),
    };
    let m = &mut cfg.mpc;
    m.samples = Some(256);
    m.max_iters = Some(20);
    m.tol = Some(1e-6);
    m.estimator = Some(EstimatorChoice::ScoreFunction);
    m.fd_step = Some(1e-4);
    m.gamma0 = Some(0.9);
    m.gamma_decay = Some(DecayChoice::Constant);
    m.log_objective = Some(false);
    m.shift = Some(1);
    m.seed = Some(42);
    m.var_floor = Some(1e-6);
    m.var_inject = Some(0.5);
    m.init_mean = Some(0.0);
    m.init_var = Some(1.0);
    m.exec_model_scale = Some(1.0);
    m.threads = Some(0);

    match id {
        TaskId::DoubleIntegrator => {
            cfg.task.initial_state = Some(vec![1.0, 0.0]);
            cfg.task.control_bounds = Some(vec![[-4.0, 4.0]]);
            m.horizon = Some(1.6);
            m.knots = Some(8);
            m.steps = Some(40);
            m.rounds = Some(20);
            cfg.cost.utility = Some(UtilityChoice::Negated);
            cfg.cost.divergence_penalty = Some(1e6);
            cfg.cost.state_weight = Some(vec![4.0, 1.0]);
            cfg.cost.control_weight = Some(vec![0.05]);
            cfg.cost.terminal_weight = Some(vec![20.0, 5.0]);
            cfg.cost.goal_state = Some(vec![0.0, 0.0]);
        }
        TaskId::Pendulum => {
            cfg.task.initial_state = Some(vec![0.0, 0.0]);
            cfg.task.control_bounds = Some(vec![[-5.0, 5.0]]);
            cfg.task.mass = Some(1.0);
            cfg.task.length = Some(1.0);
            cfg.task.gravity = Some(9.81);
            cfg.task.damping = Some(0.2);
            m.horizon = Some(3.5);
            m.knots = Some(14);
            m.steps = Some(70);
            m.samples = Some(1024);
            m.max_iters = Some(25);
            m.rounds = Some(36);
            m.var_floor = Some(1e-3);
            m.var_inject = Some(0.3);
            m.init_var = Some(1.5);
            cfg.cost.utility = Some(UtilityChoice::Negated);
            cfg.cost.divergence_penalty = Some(1e6);
            cfg.cost.state_weight = Some(vec![4.0, 1.0]);
            cfg.cost.control_weight = Some(vec![0.1]);
            cfg.cost.terminal_weight = Some(vec![40.0, 4.0]);
            cfg.cost.goal_state = Some(vec![std::f64::consts::PI, 0.0]);
        }
        TaskId::Cartpole => {
            cfg.task.initial_state = Some(vec![0.0, 0.0, 0.15, 0.0]);
            cfg.task.control_bounds = Some(vec![[-10.0, 10.0]]);
            cfg.task.cart_mass = Some(1.0);
            cfg.task.pole_mass = Some(0.1);
            cfg.task.pole_half_length = Some(0.5);
            cfg.task.gravity = Some(9.81);
            // An unstable plant needs a short horizon and fast replanning;
            // knot noise amplifies exponentially over longer windows.
            m.horizon = Some(0.8);
            m.knots = Some(8);
            m.steps = Some(32);
            m.samples = Some(512);
            m.rounds = Some(30);
            m.var_floor = Some(1e-3);
            m.var_inject = Some(4.0);
            m.init_var = Some(9.0);
            cfg.cost.utility = Some(UtilityChoice::Negated);
            cfg.cost.divergence_penalty = Some(1e6);
            cfg.cost.state_weight = Some(vec![1.0, 0.2, 12.0, 0.4]);
            cfg.cost.control_weight = Some(vec![0.001]);
            cfg.cost.terminal_weight = Some(vec![2.0, 0.5, 60.0, 2.0]);
            cfg.cost.goal_state = Some(vec![0.0, 0.0, 0.0, 0.0]);
        }
        TaskId::QuadraticSynthetic => {
            cfg.task.q_diag = Some(vec![1.0, 1.0]);
            cfg.task.b = Some(vec![0.0, 0.0]);
            m.horizon = Some(1.0);
            m.knots = Some(2);
            m.steps = Some(2);
            m.samples = Some(4096);
            m.max_iters = Some(50);
            m.tol = Some(1e-7);
            m.gamma0 = Some(1.0);
            m.gamma_decay = Some(DecayChoice::Harmonic);
            m.rounds = Some(1);
            m.var_inject = Some(1.0);
        }
    }
    cfg
}

fn require_positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be positive and finite, got {v}")))
    }
}

fn reject_if_set<T>(v: &Option<T>, key: &str, task: TaskId) -> Result<(), ConfigError> {
    if v.is_some() {
        Err(invalid(key, format!("not applicable to task `{task}`")))
    } else {
        Ok(())
    }
}

/// Parse and resolve a config file (see module docs). The environment
/// variables `BLMPC_SEED` and `BLMPC_THREADS` override the seed and thread
/// count; everything else is file-only.
pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_config_str(&text)
}

pub fn load_config_str(text: &str) -> Result<LoadedConfig, ConfigError> {
    let raw: FileConfig = toml::from_str(text)?;
    resolve(raw)
}

fn env_u64(name: &str) -> Result<Option<u64>, ConfigError> {
    match std::env::var(name) {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| invalid(name, format!("environment override must be an integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

pub fn resolve(raw: FileConfig) -> Result<LoadedConfig, ConfigError> {
    let id = raw.task.id;
    let defaults = default_config(id);
    let mut file = raw;

    macro_rules! fill {
        ($($section:ident . $field:ident),* $(,)?) => {
            $(
                if file.$section.$field.is_none() {
                    file.$section.$field = defaults.$section.$field.clone();
                }
            )*
        };
    }
    fill!(
        task.initial_state,
        task.control_bounds,
        task.state_box,
        task.mass,
        task.length,
        task.gravity,
        task.damping,
        task.cart_mass,
        task.pole_mass,
        task.pole_half_length,
        task.q_diag,
        task.b,
        cost.utility,
        cost.lambda,
        cost.divergence_penalty,
        cost.state_weight,
        cost.control_weight,
        cost.terminal_weight,
        cost.goal_state,
        mpc.horizon,
        mpc.knots,
        mpc.steps,
        mpc.samples,
        mpc.max_iters,
        mpc.tol,
        mpc.estimator,
        mpc.fd_step,
        mpc.gamma0,
        mpc.gamma_decay,
        mpc.log_objective,
        mpc.shift,
        mpc.rounds,
        mpc.seed,
        mpc.var_floor,
        mpc.var_inject,
        mpc.init_mean,
        mpc.init_var,
        mpc.exec_model_scale,
        mpc.threads,
    );

    // Environment overrides (seed and thread count only).
    if let Some(seed) = env_u64("BLMPC_SEED")? {
        file.mpc.seed = Some(seed);
    }
    if let Some(threads) = env_u64("BLMPC_THREADS")? {
        file.mpc.threads = Some(threads as usize);
    }

    // Task-specific parameter applicability.
    match id {
        TaskId::DoubleIntegrator => {
            reject_if_set(&file.task.mass, "task.mass", id)?;
            reject_if_set(&file.task.length, "task.length", id)?;
            reject_if_set(&file.task.gravity, "task.gravity", id)?;
            reject_if_set(&file.task.damping, "task.damping", id)?;
            reject_if_set(&file.task.cart_mass, "task.cart_mass", id)?;
            reject_if_set(&file.task.pole_mass, "task.pole_mass", id)?;
            reject_if_set(&file.task.pole_half_length, "task.pole_half_length", id)?;
            reject_if_set(&file.task.q_diag, "task.q_diag", id)?;
            reject_if_set(&file.task.b, "task.b", id)?;
        }
        TaskId::Pendulum => {
            reject_if_set(&file.task.cart_mass, "task.cart_mass", id)?;
            reject_if_set(&file.task.pole_mass, "task.pole_mass", id)?;
            reject_if_set(&file.task.pole_half_length, "task.pole_half_length", id)?;
            reject_if_set(&file.task.q_diag, "task.q_diag", id)?;
            reject_if_set(&file.task.b, "task.b", id)?;
        }
        TaskId::Cartpole => {
            reject_if_set(&file.task.mass, "task.mass", id)?;
            reject_if_set(&file.task.length, "task.length", id)?;
            reject_if_set(&file.task.damping, "task.damping", id)?;
            reject_if_set(&file.task.q_diag, "task.q_diag", id)?;
            reject_if_set(&file.task.b, "task.b", id)?;
        }
        TaskId::QuadraticSynthetic => {
            reject_if_set(&file.task.mass, "task.mass", id)?;
            reject_if_set(&file.task.length, "task.length", id)?;
            reject_if_set(&file.task.gravity, "task.gravity", id)?;
            reject_if_set(&file.task.damping, "task.damping", id)?;
            reject_if_set(&file.task.cart_mass, "task.cart_mass", id)?;
            reject_if_set(&file.task.pole_mass, "task.pole_mass", id)?;
            reject_if_set(&file.task.pole_half_length, "task.pole_half_length", id)?;
            reject_if_set(&file.task.initial_state, "task.initial_state", id)?;
            reject_if_set(&file.task.control_bounds, "task.control_bounds", id)?;
            reject_if_set(&file.task.state_box, "task.state_box", id)?;
            if let Some(key) = file.cost.any_set() {
                return Err(invalid(key, "the synthetic task defines its cost via task.q_diag/task.b"));
            }
        }
    }

    // Build the task.
    let model = match id {
        TaskId::DoubleIntegrator => TaskModel::DoubleIntegrator(DoubleIntegrator),
        TaskId::Pendulum => TaskModel::Pendulum(Pendulum {
            mass: require_positive("task.mass", file.task.mass.unwrap())?,
            length: require_positive("task.length", file.task.length.unwrap())?,
            gravity: require_positive("task.gravity", file.task.gravity.unwrap())?,
            damping: {
                let d = file.task.damping.unwrap();
                if d < 0.0 || !d.is_finite() {
                    return Err(invalid("task.damping", "must be nonnegative and finite"));
                }
                d
            },
        }),
        TaskId::Cartpole => TaskModel::CartPole(CartPole {
            cart_mass: require_positive("task.cart_mass", file.task.cart_mass.unwrap())?,
            pole_mass: require_positive("task.pole_mass", file.task.pole_mass.unwrap())?,
            pole_half_length: require_positive(
                "task.pole_half_length",
                file.task.pole_half_length.unwrap(),
            )?,
            gravity: require_positive("task.gravity", file.task.gravity.unwrap())?,
        }),
        TaskId::QuadraticSynthetic => {
            let q_diag = file.task.q_diag.clone().unwrap();
            let b = file.task.b.clone().unwrap();
            if q_diag.is_empty() {
                return Err(invalid("task.q_diag", "must not be empty"));
            }
            if b.len() != q_diag.len() {
                return Err(invalid(
                    "task.b",
                    format!("length {} must match task.q_diag length {}", b.len(), q_diag.len()),
                ));
            }
            if q_diag.iter().any(|q| *q < 0.0 || !q.is_finite()) {
                return Err(invalid("task.q_diag", "entries must be nonnegative and finite"));
            }
            TaskModel::Synthetic {
                q: DMatrix::from_diagonal(&DVector::from_vec(q_diag)),
                b: DVector::from_vec(b),
            }
        }
    };

    let (state_dim, control_dim) = match &model {
        TaskModel::DoubleIntegrator(m) => (m.state_dim(), m.control_dim()),
        TaskModel::Pendulum(m) => (m.state_dim(), m.control_dim()),
        TaskModel::CartPole(m) => (m.state_dim(), m.control_dim()),
        TaskModel::Synthetic { .. } => (0, 1),
    };

    let initial_state = DVector::from_vec(file.task.initial_state.clone().unwrap_or_default());
    if !matches!(model, TaskModel::Synthetic { .. }) && initial_state.len() != state_dim {
        return Err(invalid(
            "task.initial_state",
            format!("expected {state_dim} entries, got {}", initial_state.len()),
        ));
    }

    let control_bounds = match &file.task.control_bounds {
        Some(b) => {
            if b.len() != control_dim {
                return Err(invalid(
                    "task.control_bounds",
                    format!("expected {control_dim} channel(s), got {}", b.len()),
                ));
            }
            for [lo, hi] in b {
                if !(lo < hi) {
                    return Err(invalid(
                        "task.control_bounds",
                        format!("bounds must be ordered, got [{lo}, {hi}]"),
                    ));
                }
            }
            Some(b.iter().map(|[lo, hi]| (*lo, *hi)).collect::<Vec<_>>())
        }
        None => None,
    };

    let state_box = match &file.task.state_box {
        Some(b) => {
            if b.len() != state_dim {
                return Err(invalid(
                    "task.state_box",
                    format!("expected {state_dim} dimension(s), got {}", b.len()),
                ));
            }
            for ([lo, hi], x0) in b.iter().zip(initial_state.iter()) {
                if !(lo < hi) {
                    return Err(invalid("task.state_box", format!("bad interval [{lo}, {hi}]")));
                }
                if x0 < lo || x0 > hi {
                    return Err(invalid(
                        "task.initial_state",
                        format!("value {x0} outside state box [{lo}, {hi}]"),
                    ));
                }
            }
            Some(b.iter().map(|[lo, hi]| (*lo, *hi)).collect::<Vec<_>>())
        }
        None => None,
    };

    let task = TaskSpec {
        id,
        model,
        initial_state,
        control_bounds,
        state_box,
    };

    // Cost parameters (dynamics tasks only).
    let cost = if task.is_synthetic() {
        None
    } else {
        let utility = match file.cost.utility.unwrap() {
            UtilityChoice::Negated => {
                if file.cost.lambda.is_some() {
                    return Err(invalid(
                        "cost.lambda",
                        "only applicable to the exponential utility",
                    ));
                }
                UtilityVariant::Negated
            }
            UtilityChoice::Exponential => UtilityVariant::Exponential {
                lambda: require_positive("cost.lambda", file.cost.lambda.unwrap_or(1.0))?,
            },
        };
        let check_len = |key: &str, v: &[f64], expect: usize| -> Result<DVector<f64>, ConfigError> {
            if v.len() != expect {
                return Err(invalid(key, format!("expected {expect} entries, got {}", v.len())));
            }
            if v.iter().any(|w| !w.is_finite()) {
                return Err(invalid(key, "entries must be finite"));
            }
            Ok(DVector::from_vec(v.to_vec()))
        };
        Some(CostParams {
            utility,
            divergence_penalty: {
                let p = file.cost.divergence_penalty.unwrap();
                if !p.is_finite() {
                    return Err(invalid("cost.divergence_penalty", "must be finite"));
                }
                p
            },
            state_weight: check_len("cost.state_weight", file.cost.state_weight.as_ref().unwrap(), state_dim)?,
            control_weight: check_len(
                "cost.control_weight",
                file.cost.control_weight.as_ref().unwrap(),
                control_dim,
            )?,
            terminal_weight: check_len(
                "cost.terminal_weight",
                file.cost.terminal_weight.as_ref().unwrap(),
                state_dim,
            )?,
            goal_state: check_len("cost.goal_state", file.cost.goal_state.as_ref().unwrap(), state_dim)?,
        })
    };

    // MPC settings.
    let knots = file.mpc.knots.unwrap();
    let steps = file.mpc.steps.unwrap();
    if knots == 0 {
        return Err(invalid("mpc.knots", "must be >= 1"));
    }
    if steps == 0 || steps % knots != 0 {
        return Err(invalid(
            "mpc.steps",
            format!("value {steps} must be a positive multiple of mpc.knots = {knots}"),
        ));
    }
    if let TaskModel::Synthetic { q, .. } = &task.model {
        if knots != q.nrows() {
            return Err(invalid(
                "mpc.knots",
                format!("must equal task.q_diag length {} for the synthetic task", q.nrows()),
            ));
        }
    }
    let gamma0 = file.mpc.gamma0.unwrap();
    let schedule = LearningRateSchedule::new(gamma0, file.mpc.gamma_decay.unwrap().into())
        .map_err(|e| invalid("mpc.gamma0", e.to_string()))?;
    let shift = file.mpc.shift.unwrap();
    if shift == 0 || shift > knots {
        return Err(invalid(
            "mpc.shift",
            format!("value {shift} must lie in 1..=mpc.knots = {knots}"),
        ));
    }

    let mpc = MpcConfig {
        horizon: require_positive("mpc.horizon", file.mpc.horizon.unwrap())?,
        knots,
        steps,
        samples: file.mpc.samples.unwrap().max(1),
        max_iters: file.mpc.max_iters.unwrap().max(1),
        tol: require_positive("mpc.tol", file.mpc.tol.unwrap())?,
        schedule,
        estimator: file.mpc.estimator.unwrap().into(),
        fd_step: require_positive("mpc.fd_step", file.mpc.fd_step.unwrap())?,
        log_objective: file.mpc.log_objective.unwrap(),
        shift,
        rounds: file.mpc.rounds.unwrap().max(1),
        seed: file.mpc.seed.unwrap(),
        var_floor: require_positive("mpc.var_floor", file.mpc.var_floor.unwrap())?,
        var_inject: require_positive("mpc.var_inject", file.mpc.var_inject.unwrap())?,
    };
    mpc.validate()
        .map_err(|e| invalid("mpc", e.to_string()))?;
    require_positive("mpc.init_var", file.mpc.init_var.unwrap())?;
    if !file.mpc.init_mean.unwrap().is_finite() {
        return Err(invalid("mpc.init_mean", "must be finite"));
    }
    let exec_model_scale = {
        let s = file.mpc.exec_model_scale.unwrap();
        if !(s.is_finite() && s > 0.0) {
            return Err(invalid("mpc.exec_model_scale", "must be positive and finite"));
        }
        s
    };

    Ok(LoadedConfig {
        threads: file.mpc.threads.unwrap(),
        exec_model_scale,
        mpc,
        task,
        cost,
        file,
    })
}
