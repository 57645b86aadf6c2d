//! Trajectory cost: Bolza value through a utility transform.
//!
//! The Bolza value of a trajectory is the terminal cost plus the running
//! cost integrated with the trapezoidal rule on the rollout grid (running
//! cost at both step endpoints, the step's held control for both). The
//! trajectory cost is `C = −U(B)`: the negated utility, so that lower is
//! better either way:
//!
//! - `Negated`: `U(B) = −B`, hence `C = B`.
//! - `Exponential(λ)`: `U(B) = exp(−B/λ)`, hence `C = −exp(−B/λ) ∈ [−1, 0)`
//!   for `B ≥ 0`.

use nalgebra::DVector;

use crate::error::{BlmpcError, Result};
use crate::rollout::{RolloutBatch, Trajectory};

pub type TerminalCostFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type RunningCostFn = Box<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// Utility applied to the Bolza value. `Exponential` maps `[0, ∞)` into
/// `(0, 1]` with `U(0) = 1`, decreasing in `B`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UtilityVariant {
    Negated,
    Exponential { lambda: f64 },
}

/// Bolza-form cost definition for one task.
pub struct CostSpec {
    pub terminal: TerminalCostFn,
    pub running: RunningCostFn,
    pub utility: UtilityVariant,
    /// Finite stand-in cost for diverged rollouts; keeps Monte-Carlo
    /// estimators defined.
    pub divergence_penalty: f64,
}

impl CostSpec {
    pub fn new(
        terminal: TerminalCostFn,
        running: RunningCostFn,
        utility: UtilityVariant,
        divergence_penalty: f64,
    ) -> Result<Self> {
        if let UtilityVariant::Exponential { lambda } = utility {
            if !(lambda > 0.0) {
                return Err(BlmpcError::invalid("lambda", "utility temperature must be > 0"));
            }
        }
        if !divergence_penalty.is_finite() {
            return Err(BlmpcError::invalid("divergence_penalty", "must be finite"));
        }
        Ok(Self {
            terminal,
            running,
            utility,
            divergence_penalty,
        })
    }

    /// Terminal cost plus trapezoidal running-cost integral on the
    /// trajectory's own grid.
    pub fn bolza_value(&self, traj: &Trajectory) -> f64 {
        let h = traj.step_size();
        let mut integral = 0.0;
        for s in 0..traj.steps() {
            let u = &traj.controls[s];
            let l0 = (self.running)(traj.times[s], &traj.states[s], u);
            let l1 = (self.running)(traj.times[s + 1], &traj.states[s + 1], u);
            integral += 0.5 * h * (l0 + l1);
        }
        (self.terminal)(traj.final_state()) + integral
    }

    /// `C = −U(B)` for a finite Bolza value `B`.
    pub fn apply_utility(&self, bolza: f64) -> f64 {
        match self.utility {
            UtilityVariant::Negated => bolza,
            UtilityVariant::Exponential { lambda } => {
                if bolza < 0.0 {
                    // Outside the utility's documented domain; the cost
                    // drops below −1 and the effective weight temperature
                    // changes.
                    log::warn!("exponential utility applied to negative Bolza value {bolza}");
                }
                -(-bolza / lambda).exp()
            }
        }
    }

    /// Trajectory cost; a non-finite Bolza value yields the divergence
    /// penalty.
    pub fn trajectory_cost(&self, traj: &Trajectory) -> f64 {
        let bolza = self.bolza_value(traj);
        if !bolza.is_finite() {
            return self.divergence_penalty;
        }
        self.apply_utility(bolza)
    }
}

/// Monte-Carlo estimate of the expected cost: the arithmetic mean of the
/// batch costs, summed in record order.
pub fn expected_cost(batch: &RolloutBatch) -> Result<f64> {
    mean_in_order(&batch.costs())
}

/// Mean accumulated in index order (thread-count independent).
pub fn mean_in_order(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(BlmpcError::EmptyBatch);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{integrate, ControlParameterization, DynamicsModel, RolloutRecord};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    struct Still;

    impl DynamicsModel for Still {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn derivative(&self, _t: f64, _x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
    }

    fn unit_control_traj() -> Trajectory {
        let param = ControlParameterization::new(0.0, 1.0, 1, 1, None).unwrap();
        integrate(&Still, &DVector::zeros(1), &param, &DVector::from_vec(vec![1.0]), 10).unwrap()
    }

    fn control_energy_spec(utility: UtilityVariant) -> CostSpec {
        CostSpec::new(
            Box::new(|_x: &DVector<f64>| 0.0),
            Box::new(|_t, _x, u: &DVector<f64>| u.norm_squared()),
            utility,
            1e6,
        )
        .unwrap()
    }

    #[test]
    fn constant_integrand_negated() {
        let spec = control_energy_spec(UtilityVariant::Negated);
        assert_relative_eq!(spec.trajectory_cost(&unit_control_traj()), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn constant_integrand_exponential() {
        let spec = control_energy_spec(UtilityVariant::Exponential { lambda: 1.0 });
        assert_relative_eq!(
            spec.trajectory_cost(&unit_control_traj()),
            -(-1.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_bolza_value_hits_utility_at_zero() {
        let zero = CostSpec::new(
            Box::new(|x: &DVector<f64>| x.norm_squared()),
            Box::new(|_t, _x, _u| 0.0),
            UtilityVariant::Negated,
            1e6,
        )
        .unwrap();
        let param = ControlParameterization::new(0.0, 1.0, 1, 1, None).unwrap();
        let traj = integrate(&Still, &DVector::zeros(1), &param, &DVector::zeros(1), 4).unwrap();
        assert_abs_diff_eq!(zero.trajectory_cost(&traj), 0.0);

        let zero_exp = CostSpec::new(
            Box::new(|x: &DVector<f64>| x.norm_squared()),
            Box::new(|_t, _x, _u| 0.0),
            UtilityVariant::Exponential { lambda: 1.0 },
            1e6,
        )
        .unwrap();
        assert_abs_diff_eq!(zero_exp.trajectory_cost(&traj), -1.0);
    }

    #[test]
    fn exponential_utility_range_and_tail() {
        let spec = control_energy_spec(UtilityVariant::Exponential { lambda: 2.0 });
        for b in [0.0, 0.1, 1.0, 50.0, 500.0] {
            let c = spec.apply_utility(b);
            assert!((-1.0..0.0).contains(&c), "B={b} gave C={c}");
        }
        // B = 1000 λ: the cost has decayed to zero (or underflowed to it).
        let tail = spec.apply_utility(1000.0 * 2.0);
        assert!(tail.abs() <= 1e-300, "tail {tail}");
    }

    #[test]
    fn utilities_preserve_bolza_order() {
        let neg = control_energy_spec(UtilityVariant::Negated);
        let exp = control_energy_spec(UtilityVariant::Exponential { lambda: 0.7 });
        let bs = [0.0, 0.004, 0.3, 1.7, 12.0, 90.0];
        for pair in bs.windows(2) {
            assert!(neg.apply_utility(pair[0]) <= neg.apply_utility(pair[1]));
            assert!(exp.apply_utility(pair[0]) <= exp.apply_utility(pair[1]));
        }
    }

    #[test]
    fn trapezoid_error_quarters_under_step_doubling() {
        // Exact trajectory x(τ) = τ², running cost x² = τ⁴ with
        // ∫₀¹ τ⁴ dτ = 1/5; the trapezoid error term is h²-dominated.
        let spec = CostSpec::new(
            Box::new(|_x: &DVector<f64>| 0.0),
            Box::new(|_t, x: &DVector<f64>, _u| x[0] * x[0]),
            UtilityVariant::Negated,
            1e6,
        )
        .unwrap();
        let synth = |steps: usize| {
            let times: Vec<f64> = (0..=steps).map(|s| s as f64 / steps as f64).collect();
            Trajectory {
                states: times.iter().map(|t| DVector::from_vec(vec![t * t])).collect(),
                controls: vec![DVector::zeros(1); steps],
                times,
            }
        };
        let err = |steps: usize| (spec.bolza_value(&synth(steps)) - 0.2).abs();
        let ratio = err(50) / err(100);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn non_finite_bolza_gets_penalty() {
        let spec = CostSpec::new(
            Box::new(|_x: &DVector<f64>| f64::NAN),
            Box::new(|_t, _x, _u| 0.0),
            UtilityVariant::Negated,
            123.0,
        )
        .unwrap();
        assert_eq!(spec.trajectory_cost(&unit_control_traj()), 123.0);
    }

    #[test]
    fn expected_cost_means_in_order() {
        let rec = |cost: f64| RolloutRecord {
            knots: DVector::zeros(1),
            trajectory: None,
            cost,
            diverged: false,
        };
        let batch = RolloutBatch {
            records: vec![rec(0.0), rec(1.0)],
        };
        assert_relative_eq!(expected_cost(&batch).unwrap(), 0.5);

        let constant = RolloutBatch {
            records: vec![rec(2.5); 7],
        };
        assert_relative_eq!(expected_cost(&constant).unwrap(), 2.5);

        assert!(expected_cost(&RolloutBatch { records: vec![] }).is_err());
    }

    #[test]
    fn sample_mean_matches_clt_bound() {
        // 10⁵ draws of N(0,1) through the batch-mean path.
        let policy = crate::policy::GaussianPolicy::standard(1).unwrap();
        let n = 100_000;
        let costs: Vec<f64> = policy.sample(n, 77).iter().map(|s| s[0]).collect();
        let mean = mean_in_order(&costs).unwrap();
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(CostSpec::new(
            Box::new(|_x: &DVector<f64>| 0.0),
            Box::new(|_t, _x, _u| 0.0),
            UtilityVariant::Exponential { lambda: 0.0 },
            1e6,
        )
        .is_err());
    }
}
