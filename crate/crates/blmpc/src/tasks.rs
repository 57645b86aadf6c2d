//! Benchmark dynamics models and the synthetic quadratic planning cost.

use nalgebra::{DMatrix, DVector};

use crate::engine::ControlCost;
use crate::error::{BlmpcError, Result};
use crate::rollout::DynamicsModel;

/// Double integrator: `ẋ₁ = x₂`, `ẋ₂ = u`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DoubleIntegrator;

impl DynamicsModel for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn derivative(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1], u[0]])
    }
}

/// Torque-actuated pendulum, angle measured from the hanging position so
/// the upright target is `(π, 0)`. State `(angle, rate)`.
#[derive(Clone, Copy, Debug)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.2,
        }
    }
}

impl DynamicsModel for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn derivative(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let inertia = self.mass * self.length * self.length;
        let gravity_torque = self.mass * self.gravity * self.length * x[0].sin();
        DVector::from_vec(vec![
            x[1],
            (u[0] - self.damping * x[1] - gravity_torque) / inertia,
        ])
    }
}

/// Cart-pole with a force-actuated cart. State
/// `(position, velocity, pole angle from upright, pole rate)`;
/// `pole_half_length` is the pivot-to-centre-of-mass distance.
#[derive(Clone, Copy, Debug)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub gravity: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gravity: 9.81,
        }
    }
}

impl DynamicsModel for CartPole {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn derivative(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let total = self.cart_mass + self.pole_mass;
        let (sin, cos) = x[2].sin_cos();
        let rate2 = x[3] * x[3];
        let temp = (u[0] + self.pole_mass * self.pole_half_length * rate2 * sin) / total;
        let angle_acc = (self.gravity * sin - cos * temp)
            / (self.pole_half_length
                * (4.0 / 3.0 - self.pole_mass * cos * cos / total));
        let pos_acc =
            temp - self.pole_mass * self.pole_half_length * angle_acc * cos / total;
        DVector::from_vec(vec![x[1], pos_acc, x[3], angle_acc])
    }
}

/// Frozen dynamics `ẋ = 0`; the state never moves regardless of control.
#[derive(Clone, Copy, Debug)]
pub struct Stationary {
    pub state_dim: usize,
    pub control_dim: usize,
}

impl DynamicsModel for Stationary {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn derivative(&self, _t: f64, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
}

/// Vector field of `inner` scaled by a constant factor; the "perturbed
/// plant" switch for robustness experiments.
pub struct ScaledDynamics<'a> {
    pub inner: &'a dyn DynamicsModel,
    pub scale: f64,
}

impl DynamicsModel for ScaledDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn derivative(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.inner.derivative(t, x, u) * self.scale
    }
}

/// Synthetic planning cost directly on the knot vector:
/// `C(θ) = ½ θᵀQθ + bᵀθ`, no dynamics involved. Exercises every oracle.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    b: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = b.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(BlmpcError::DimensionMismatch {
                expected: d,
                got: q.nrows(),
            });
        }
        Ok(Self {
            q: (&q + q.transpose()) * 0.5,
            b,
        })
    }

    pub fn isotropic(weight: f64, dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * weight, DVector::zeros(dim))
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
}

impl ControlCost for QuadraticCost {
    fn cost(&self, knots: &DVector<f64>) -> f64 {
        0.5 * knots.dot(&(&self.q * knots)) + self.b.dot(knots)
    }
}
