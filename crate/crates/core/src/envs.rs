//! Small deterministic continuous-control tasks with actions in `[-1, 1]^d`.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvId {
    PointMass2d,
    Pendulum,
    NdIntegrator(usize),
}

impl EnvId {
    pub fn name(self) -> String {
        match self {
            EnvId::PointMass2d => "point_mass_2d".into(),
            EnvId::Pendulum => "pendulum".into(),
            EnvId::NdIntegrator(d) => format!("nd_integrator({d})"),
        }
    }

    /// Parses `point_mass_2d`, `pendulum` or `nd_integrator` with a separate dimension.
    pub fn parse(id: &str, dim: usize) -> Result<Self> {
        match id {
            "point_mass_2d" => Ok(EnvId::PointMass2d),
            "pendulum" => Ok(EnvId::Pendulum),
            "nd_integrator" if dim >= 1 => Ok(EnvId::NdIntegrator(dim)),
            "nd_integrator" => Err(Error::Config("nd_integrator needs env.dim >= 1".into())),
            _ => Err(Error::Config(format!(
                "unknown environment {id:?} (expected point_mass_2d, pendulum or nd_integrator)"
            ))),
        }
    }

    pub fn config_id(self) -> &'static str {
        match self {
            EnvId::PointMass2d => "point_mass_2d",
            EnvId::Pendulum => "pendulum",
            EnvId::NdIntegrator(_) => "nd_integrator",
        }
    }
}

const POINT_MASS_DT: f64 = 0.1;
const INTEGRATOR_DT: f64 = 0.1;
const PENDULUM_DT: f64 = 0.05;
const PENDULUM_G: f64 = 10.0;
const PENDULUM_MAX_SPEED: f64 = 8.0;
const PENDULUM_TORQUE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub gamma_hint: f64,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Result<Self> {
        let spec = match id {
            EnvId::PointMass2d => Self {
                id,
                state_dim: 4,
                action_dim: 2,
                horizon: 100,
                gamma_hint: 0.99,
            },
            EnvId::Pendulum => Self {
                id,
                state_dim: 3,
                action_dim: 1,
                horizon: 200,
                gamma_hint: 0.99,
            },
            EnvId::NdIntegrator(d) => {
                if d == 0 {
                    return Err(Error::Config("nd_integrator dimension must be >= 1".into()));
                }
                Self {
                    id,
                    state_dim: 2 * d,
                    action_dim: d,
                    horizon: 100,
                    gamma_hint: 0.99,
                }
            }
        };
        Ok(spec)
    }

    /// Draws an initial state.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.id {
            EnvId::PointMass2d | EnvId::NdIntegrator(_) => {
                let d = self.action_dim;
                let mut s = vec![0.0; 2 * d];
                for p in &mut s[..d] {
                    *p = rng.gen_range(-1.0..=1.0);
                }
                s
            }
            EnvId::Pendulum => {
                let theta: f64 = rng.gen_range(-PI..=PI);
                let omega: f64 = rng.gen_range(-1.0..=1.0);
                vec![theta.cos(), theta.sin(), omega]
            }
        }
    }

    /// One transition from `state` under an in-range `action`; returns the next
    /// state and the reward for `(state, action)`.
    pub fn dynamics(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
        match self.id {
            EnvId::PointMass2d | EnvId::NdIntegrator(_) => {
                let d = self.action_dim;
                let dt = if self.id == EnvId::PointMass2d {
                    POINT_MASS_DT
                } else {
                    INTEGRATOR_DT
                };
                let (p, v) = state.split_at(d);
                let a_sq: f64 = action.iter().map(|a| a * a).sum();
                let p_sq: f64 = p.iter().map(|x| x * x).sum();
                let reward = if self.id == EnvId::PointMass2d {
                    -p_sq.sqrt() - 0.01 * a_sq
                } else {
                    -p_sq / d as f64 - 0.01 * a_sq
                };
                let mut next = vec![0.0; 2 * d];
                for i in 0..d {
                    let v_new = v[i] + action[i] * dt;
                    next[d + i] = v_new;
                    next[i] = p[i] + v_new * dt;
                }
                (next, reward)
            }
            EnvId::Pendulum => {
                let theta = state[1].atan2(state[0]);
                let omega = state[2];
                let torque = PENDULUM_TORQUE * action[0];
                let reward = -(theta * theta + 0.1 * omega * omega + 0.001 * torque * torque);
                let alpha = 1.5 * PENDULUM_G * theta.sin() + 3.0 * torque;
                let omega_new =
                    (omega + alpha * PENDULUM_DT).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
                let theta_new = theta + omega_new * PENDULUM_DT;
                (vec![theta_new.cos(), theta_new.sin(), omega_new], reward)
            }
        }
    }

    /// Mean-return threshold a trained agent is expected to reach.
    pub fn optimal_return_bound(&self) -> f64 {
        optimal_return_bound(self.id)
    }
}

pub fn optimal_return_bound(id: EnvId) -> f64 {
    match id {
        EnvId::PointMass2d => -15.0,
        EnvId::Pendulum => -300.0,
        EnvId::NdIntegrator(_) => -10.0,
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub s_next: Vec<f64>,
    pub reward: f64,
    /// Never set by these tasks; kept distinct from truncation.
    pub done: bool,
    pub truncated: bool,
}

/// A running episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    spec: EnvSpec,
    state: Vec<f64>,
    t: usize,
    clamped_actions: u64,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Self {
        Self {
            state: vec![0.0; spec.state_dim],
            spec,
            t: 0,
            clamped_actions: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    /// Number of actions that arrived outside `[-1, 1]` and were clamped.
    pub fn clamped_actions(&self) -> u64 {
        self.clamped_actions
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state = self.spec.initial_state(rng);
        self.t = 0;
        self.state.clone()
    }

    /// Restores a mid-episode position.
    pub fn restore(&mut self, state: Vec<f64>, t: usize, clamped_actions: u64) -> Result<()> {
        crate::error::check_dim("environment state", self.spec.state_dim, state.len())?;
        self.state = state;
        self.t = t;
        self.clamped_actions = clamped_actions;
        Ok(())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        crate::error::check_dim("action", self.spec.action_dim, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        if clamped != action {
            self.clamped_actions += 1;
            log::warn!(
                "action outside [-1, 1] clamped ({} so far)",
                self.clamped_actions
            );
        }
        let (next, reward) = self.spec.dynamics(&self.state, &clamped);
        self.state = next.clone();
        self.t += 1;
        Ok(StepResult {
            s_next: next,
            reward,
            done: false,
            truncated: self.t >= self.spec.horizon,
        })
    }
}
