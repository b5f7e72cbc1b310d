//! Deterministic continuous-control tasks with known rewards.
//!
//! Every task exposes the same surface through [`EnvSpec`]: a transition
//! `step(s, a)` that clips the action to its bounds, a reward `r(s, a)` with
//! its analytic gradient, an initial-state sampler and a horizon.

mod cartpole;
mod linear;
mod pendulum;
mod pointmass;

use rand::Rng;

pub use cartpole::CartPole;
pub use linear::LinearSystem;
pub use pendulum::Pendulum;
pub use pointmass::PointMass;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::numerics::rng::Rng as StreamRng;
use crate::policy::GaussianPolicy;

/// One real `(s, a, s')` triple; `a` is the action as applied (clipped).
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnvSpec {
    Pendulum(Pendulum),
    CartPoleSwingUp(CartPole),
    PointMass(PointMass),
    Linear(LinearSystem),
}

pub const ENV_IDS: [&str; 4] = ["pendulum", "cartpole_swingup", "pointmass", "linear"];

fn parse_usize(key: &str, value: f64) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::InvalidConfig(format!("{key} must be a positive integer")))
    }
}

impl EnvSpec {
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "pendulum" => EnvSpec::Pendulum(Pendulum::default()),
            "cartpole_swingup" => EnvSpec::CartPoleSwingUp(CartPole::default()),
            "pointmass" => EnvSpec::PointMass(PointMass::default()),
            "linear" => EnvSpec::Linear(LinearSystem::default()),
            other => return Err(Error::InvalidConfig(format!("unknown environment `{other}`"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            EnvSpec::Pendulum(_) => "pendulum",
            EnvSpec::CartPoleSwingUp(_) => "cartpole_swingup",
            EnvSpec::PointMass(_) => "pointmass",
            EnvSpec::Linear(_) => "linear",
        }
    }

    /// Overrides a physical or reward constant by name.
    pub fn set_constant(&mut self, key: &str, value: f64) -> Result<()> {
        let unknown = || Error::InvalidConfig(format!("unknown constant `{key}`"));
        match self {
            EnvSpec::Pendulum(p) => match key {
                "gravity" => p.gravity = value,
                "length" => p.length = value,
                "mass" => p.mass = value,
                "max_torque" => p.max_torque = value,
                "dt" => p.dt = value,
                "substeps" => p.substeps = parse_usize(key, value)?,
                "horizon" => p.horizon = parse_usize(key, value)?,
                "angle_cost" => p.angle_cost = value,
                "velocity_cost" => p.velocity_cost = value,
                "action_cost" => p.action_cost = value,
                "init_angle_noise" => p.init_angle_noise = value,
                "init_velocity_noise" => p.init_velocity_noise = value,
                _ => return Err(unknown()),
            },
            EnvSpec::CartPoleSwingUp(c) => match key {
                "gravity" => c.gravity = value,
                "cart_mass" => c.cart_mass = value,
                "pole_mass" => c.pole_mass = value,
                "half_length" => c.half_length = value,
                "max_force" => c.max_force = value,
                "dt" => c.dt = value,
                "substeps" => c.substeps = parse_usize(key, value)?,
                "horizon" => c.horizon = parse_usize(key, value)?,
                "angle_cost" => c.angle_cost = value,
                "position_cost" => c.position_cost = value,
                "action_cost" => c.action_cost = value,
                _ => return Err(unknown()),
            },
            EnvSpec::PointMass(p) => match key {
                "mass" => p.mass = value,
                "damping" => p.damping = value,
                "max_force" => p.max_force = value,
                "dt" => p.dt = value,
                "horizon" => p.horizon = parse_usize(key, value)?,
                "goal_x" => p.goal[0] = value,
                "goal_y" => p.goal[1] = value,
                "init_box" => p.init_box = value,
                "action_cost" => p.action_cost = value,
                "goal_smoothing" => p.goal_smoothing = value,
                _ => return Err(unknown()),
            },
            EnvSpec::Linear(l) => match key {
                "dim" => l.dim = parse_usize(key, value)?,
                "gain" => l.gain = value,
                "max_action" => l.max_action = value,
                "horizon" => l.horizon = parse_usize(key, value)?,
                "state_cost" => l.state_cost = value,
                "action_cost" => l.action_cost = value,
                "init_box" => l.init_box = value,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvSpec::Pendulum(_) => 3,
            EnvSpec::CartPoleSwingUp(_) => 5,
            EnvSpec::PointMass(_) => 4,
            EnvSpec::Linear(l) => l.dim,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvSpec::Pendulum(_) | EnvSpec::CartPoleSwingUp(_) => 1,
            EnvSpec::PointMass(_) => 2,
            EnvSpec::Linear(l) => l.dim,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Pendulum(p) => p.horizon,
            EnvSpec::CartPoleSwingUp(c) => c.horizon,
            EnvSpec::PointMass(p) => p.horizon,
            EnvSpec::Linear(l) => l.horizon,
        }
    }

    /// Symmetric per-dimension bound: actions live in `[-b, b]`.
    pub fn action_bound(&self) -> f64 {
        match self {
            EnvSpec::Pendulum(p) => p.max_torque,
            EnvSpec::CartPoleSwingUp(c) => c.max_force,
            EnvSpec::PointMass(p) => p.max_force,
            EnvSpec::Linear(l) => l.max_action,
        }
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        let b = self.action_bound();
        a.iter().map(|x| x.clamp(-b, b)).collect()
    }

    /// `s' = f(s, clip(a))`.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_dim("env_step state", self.state_dim(), s.len())?;
        check_dim("env_step action", self.action_dim(), a.len())?;
        check_finite("env_step state", s)?;
        let a = self.clip_action(a);
        let next = match self {
            EnvSpec::Pendulum(p) => p.step(s, &a),
            EnvSpec::CartPoleSwingUp(c) => c.step(s, &a),
            EnvSpec::PointMass(p) => p.step(s, &a),
            EnvSpec::Linear(l) => l.step(s, &a),
        };
        check_finite("env_step next state", &next)?;
        Ok(next)
    }

    /// Known reward `r(s, a)`, evaluated on the action as given.
    pub fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        match self {
            EnvSpec::Pendulum(p) => p.reward(s, a),
            EnvSpec::CartPoleSwingUp(c) => c.reward(s, a),
            EnvSpec::PointMass(p) => p.reward(s, a),
            EnvSpec::Linear(l) => l.reward(s, a),
        }
    }

    /// `(∂r/∂s, ∂r/∂a)`.
    pub fn reward_grad(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            EnvSpec::Pendulum(p) => p.reward_grad(s, a),
            EnvSpec::CartPoleSwingUp(c) => c.reward_grad(s, a),
            EnvSpec::PointMass(p) => p.reward_grad(s, a),
            EnvSpec::Linear(l) => l.reward_grad(s, a),
        }
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            EnvSpec::Pendulum(p) => p.sample_initial(rng),
            EnvSpec::CartPoleSwingUp(c) => c.sample_initial(rng),
            EnvSpec::PointMass(p) => p.sample_initial(rng),
            EnvSpec::Linear(l) => l.sample_initial(rng),
        }
    }

    pub fn sample_initial_states<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_initial_state(rng)).collect()
    }

    /// Rolls one horizon through the true dynamics; returns the undiscounted
    /// return.
    pub fn run_episode<F>(&self, s0: &[f64], mut act: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut s = s0.to_vec();
        let mut total = 0.0;
        for _ in 0..self.horizon() {
            let a = self.clip_action(&act(&s));
            total += self.reward(&s, &a);
            s = self.step(&s, &a)?;
        }
        Ok(total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl ReturnEstimate {
    pub fn from_samples(returns: &[f64]) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let stderr = if returns.len() > 1 {
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

/// Mean and standard error of the undiscounted real return over
/// `n_episodes` episodes started from ρ0. With `deterministic` the policy
/// mean is applied; otherwise actions are sampled.
pub fn evaluate_real_return(
    spec: &EnvSpec,
    policy: &GaussianPolicy,
    n_episodes: usize,
    rng: &mut StreamRng,
    deterministic: bool,
) -> Result<ReturnEstimate> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be at least 1".into()));
    }
    let starts = spec.sample_initial_states(n_episodes, rng);
    evaluate_from_states(spec, policy, &starts, rng, deterministic)
}

pub fn evaluate_from_states(
    spec: &EnvSpec,
    policy: &GaussianPolicy,
    starts: &[Vec<f64>],
    rng: &mut StreamRng,
    deterministic: bool,
) -> Result<ReturnEstimate> {
    let mut returns = Vec::with_capacity(starts.len());
    for s0 in starts {
        let mut failure = None;
        let ret = spec.run_episode(s0, |s| {
            let out = if deterministic {
                policy.mean_action(s)
            } else {
                policy.sample_action(s, rng).map(|(a, _)| a)
            };
            out.unwrap_or_else(|e| {
                failure = Some(e);
                vec![0.0; spec.action_dim()]
            })
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        returns.push(ret);
    }
    Ok(ReturnEstimate::from_samples(&returns))
}

/// Projects `(c, s)` onto the unit circle; `(0, 0)` maps to upright.
pub(crate) fn unit_circle(c: f64, s: f64) -> (f64, f64) {
    let r = c.hypot(s);
    if r > 0.0 {
        (c / r, s / r)
    } else {
        (1.0, 0.0)
    }
}

/// `cos θ` read from a possibly off-circle `(c, s)` pair, with its gradient
/// in `(c, s)`. Learned models do not keep predictions on the unit circle,
/// and a raw `c` above 1 would pay out more than the best real reward.
pub(crate) fn circle_cos(c: f64, s: f64) -> (f64, [f64; 2]) {
    let r = c.hypot(s);
    if r > 0.0 {
        let r3 = r * r * r;
        (c / r, [s * s / r3, -c * s / r3])
    } else {
        (1.0, [0.0, 0.0])
    }
}

/// Rotates the angle encoded by `(c, s)` by `delta`.
pub(crate) fn rotate(c: f64, s: f64, delta: f64) -> (f64, f64) {
    if delta == 0.0 {
        return (c, s);
    }
    let (sd, cd) = delta.sin_cos();
    unit_circle(c * cd - s * sd, s * cd + c * sd)
}
