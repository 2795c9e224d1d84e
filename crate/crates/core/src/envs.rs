//! Small deterministic continuous-control tasks with actions in `[-1, 1]^d`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Time limit reached; the episode is cut, not terminated.
    pub truncated: bool,
}

pub trait Env {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;
}

fn check_action(action: &[f64], dim: usize) -> Result<()> {
    if action.len() != dim {
        return Err(Error::dimension("action", dim, action.len()));
    }
    if let Some(a) = action.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
        return Err(Error::Contract(format!("action component {a} outside [-1, 1]")));
    }
    Ok(())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    theta - 2.0 * PI * ((theta - PI) / (2.0 * PI)).ceil()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    /// Radians, 0 is upright.
    pub theta: f64,
    pub theta_dot: f64,
}

/// Torque-limited pendulum swing-up.
#[derive(Clone, Debug)]
pub struct PendulumSwingup {
    state: PendulumState,
    t: usize,
    needs_reset: bool,
}

impl PendulumSwingup {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const TORQUE_SCALE: f64 = 2.0;
    pub const HORIZON: usize = 200;

    pub fn new() -> Self {
        Self {
            state: PendulumState {
                theta: PI,
                theta_dot: 0.0,
            },
            t: 0,
            needs_reset: true,
        }
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    /// Places the pendulum in `state` and starts a fresh episode.
    pub fn reset_to(&mut self, state: PendulumState) -> Vec<f64> {
        self.state = PendulumState {
            theta: wrap_angle(state.theta),
            theta_dot: state.theta_dot.clamp(-Self::MAX_SPEED, Self::MAX_SPEED),
        };
        self.t = 0;
        self.needs_reset = false;
        Self::observe(&self.state)
    }

    pub fn observe(s: &PendulumState) -> Vec<f64> {
        vec![s.theta.cos(), s.theta.sin(), s.theta_dot / Self::MAX_SPEED]
    }

    /// Pure dynamics: next state and the reward of the current one.
    pub fn dynamics(s: &PendulumState, u: f64) -> Result<(PendulumState, f64)> {
        check_action(&[u], 1)?;
        let torque = Self::TORQUE_SCALE * u;
        let th = wrap_angle(s.theta);
        let reward = -(th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * torque * torque);
        let accel = 3.0 * Self::GRAVITY / (2.0 * Self::LENGTH) * s.theta.sin()
            + 3.0 / (Self::MASS * Self::LENGTH * Self::LENGTH) * torque;
        let theta_dot = (s.theta_dot + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let theta = wrap_angle(s.theta + theta_dot * Self::DT);
        Ok((PendulumState { theta, theta_dot }, reward))
    }
}

impl Default for PendulumSwingup {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PendulumSwingup {
    fn observation_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        Self::HORIZON
    }

    /// Angle uniform on the circle, angular velocity uniform in `[-1, 1]`.
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-1.0..1.0);
        self.reset_to(PendulumState { theta, theta_dot })
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.needs_reset {
            return Err(Error::Contract("step called on a finished episode without reset".into()));
        }
        check_action(action, 1)?;
        let (next, reward) = Self::dynamics(&self.state, action[0])?;
        self.state = next;
        self.t += 1;
        let truncated = self.t >= Self::HORIZON;
        self.needs_reset = truncated;
        Ok(Step {
            observation: Self::observe(&self.state),
            reward,
            truncated,
        })
    }
}

/// Point mass in the unit box steered by velocity commands toward a fixed goal.
#[derive(Clone, Debug)]
pub struct PointReach {
    position: [f64; 2],
    t: usize,
    needs_reset: bool,
}

impl PointReach {
    pub const GOAL: [f64; 2] = [0.5, 0.5];
    pub const SPEED: f64 = 0.05;
    pub const HORIZON: usize = 100;

    pub fn new() -> Self {
        Self {
            position: [0.0, 0.0],
            t: 0,
            needs_reset: true,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn reset_to(&mut self, position: [f64; 2]) -> Vec<f64> {
        self.position = [position[0].clamp(-1.0, 1.0), position[1].clamp(-1.0, 1.0)];
        self.t = 0;
        self.needs_reset = false;
        Self::observe(&self.position)
    }

    /// Position followed by the offset to the goal.
    pub fn observe(p: &[f64; 2]) -> Vec<f64> {
        vec![p[0], p[1], Self::GOAL[0] - p[0], Self::GOAL[1] - p[1]]
    }

    pub fn reward_at(p: &[f64; 2]) -> f64 {
        let d2 = (p[0] - Self::GOAL[0]).powi(2) + (p[1] - Self::GOAL[1]).powi(2);
        (-8.0 * d2).exp()
    }

    /// Pure dynamics: moved and clamped position, reward at the new position.
    pub fn dynamics(p: &[f64; 2], command: &[f64]) -> Result<([f64; 2], f64)> {
        check_action(command, 2)?;
        let next = [
            (p[0] + Self::SPEED * command[0]).clamp(-1.0, 1.0),
            (p[1] + Self::SPEED * command[1]).clamp(-1.0, 1.0),
        ];
        Ok((next, Self::reward_at(&next)))
    }

    /// Heads straight for the goal at full speed along the dominant axis,
    /// landing exactly on it once within one step.
    pub fn straight_line_command(p: &[f64; 2]) -> Vec<f64> {
        let d = [Self::GOAL[0] - p[0], Self::GOAL[1] - p[1]];
        let reach = d[0].abs().max(d[1].abs()).max(Self::SPEED);
        vec![d[0] / reach, d[1] / reach]
    }
}

impl Default for PointReach {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointReach {
    fn observation_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        Self::HORIZON
    }

    /// Start uniform over the box.
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.reset_to(p)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.needs_reset {
            return Err(Error::Contract("step called on a finished episode without reset".into()));
        }
        let (next, reward) = Self::dynamics(&self.position, action)?;
        self.position = next;
        self.t += 1;
        let truncated = self.t >= Self::HORIZON;
        self.needs_reset = truncated;
        Ok(Step {
            observation: Self::observe(&self.position),
            reward,
            truncated,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Pendulum,
    PointReach,
}

impl EnvKind {
    pub fn make(self) -> Box<dyn Env + Send> {
        match self {
            EnvKind::Pendulum => Box::new(PendulumSwingup::new()),
            EnvKind::PointReach => Box::new(PointReach::new()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointReach => "point-reach",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "point-reach" => Ok(EnvKind::PointReach),
            other => Err(Error::Usage(format!(
                "unknown environment {other:?} (expected pendulum or point-reach)"
            ))),
        }
    }
}

/// Undiscounted return of one episode driven by `policy`.
pub fn rollout_return(
    env: &mut dyn Env,
    seed: u64,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<f64> {
    let mut obs = env.reset(seed);
    let mut total = 0.0;
    loop {
        let step = env.step(&policy(&obs))?;
        total += step.reward;
        obs = step.observation;
        if step.truncated {
            return Ok(total);
        }
    }
}
