use rand::Rng;

use super::{circle_cos, rotate, unit_circle};

/// Torque-limited pendulum, angle measured from upright. State is
/// `(cos θ, sin θ, θ̇)`, action is a single torque.
#[derive(Clone, Debug, PartialEq)]
pub struct Pendulum {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub max_torque: f64,
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
    pub angle_cost: f64,
    pub velocity_cost: f64,
    pub action_cost: f64,
    pub init_angle_noise: f64,
    pub init_velocity_noise: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            length: 1.0,
            mass: 1.0,
            max_torque: 5.0,
            dt: 0.05,
            substeps: 2,
            horizon: 200,
            angle_cost: 1.0,
            velocity_cost: 0.01,
            action_cost: 0.001,
            init_angle_noise: 0.1,
            init_velocity_noise: 0.1,
        }
    }
}

impl Pendulum {
    pub fn angular_acceleration(&self, sin_theta: f64, torque: f64) -> f64 {
        (self.gravity / self.length) * sin_theta + torque / (self.mass * self.length * self.length)
    }

    pub(super) fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (mut c, mut sn) = unit_circle(s[0], s[1]);
        let mut w = s[2];
        let h = self.dt / self.substeps as f64;
        for _ in 0..self.substeps {
            w += h * self.angular_acceleration(sn, a[0]);
            (c, sn) = rotate(c, sn, h * w);
        }
        vec![c, sn, w]
    }

    pub(super) fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        let (cos, _) = circle_cos(s[0], s[1]);
        -(self.angle_cost * (1.0 - cos) + self.velocity_cost * s[2] * s[2] + self.action_cost * a[0] * a[0])
    }

    pub(super) fn reward_grad(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (_, g) = circle_cos(s[0], s[1]);
        (
            vec![self.angle_cost * g[0], self.angle_cost * g[1], -2.0 * self.velocity_cost * s[2]],
            vec![-2.0 * self.action_cost * a[0]],
        )
    }

    pub(super) fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let theta = std::f64::consts::PI + symmetric_uniform(rng, self.init_angle_noise);
        let w = symmetric_uniform(rng, self.init_velocity_noise);
        vec![theta.cos(), theta.sin(), w]
    }

    /// Resting straight down; an exact fixed point of `step` under zero torque.
    pub fn hanging_state(&self) -> Vec<f64> {
        vec![-1.0, 0.0, 0.0]
    }

    /// Mechanical energy measured from the hanging rest position.
    pub fn energy(&self, s: &[f64]) -> f64 {
        let (c, _) = unit_circle(s[0], s[1]);
        let ml2 = self.mass * self.length * self.length;
        0.5 * ml2 * s[2] * s[2] + self.mass * self.gravity * self.length * (1.0 + c)
    }

    /// Energy-shaping swing-up with a saturated PD catch near the top.
    pub fn energy_shaping_action(&self, s: &[f64]) -> f64 {
        let (c, sn) = unit_circle(s[0], s[1]);
        let w = s[2];
        let theta = sn.atan2(c);
        let u = if c > 0.9 {
            let wn2 = self.gravity / self.length;
            let ml2 = self.mass * self.length * self.length;
            -ml2 * ((wn2 + 16.0) * theta + 7.0 * w)
        } else {
            // energy relative to upright rest; pump while below, brake above
            let deficit = self.energy(s) - 2.0 * self.mass * self.gravity * self.length;
            let dir = if w >= 0.0 { 1.0 } else { -1.0 };
            if deficit < 0.0 {
                self.max_torque * dir
            } else {
                -self.max_torque * dir
            }
        };
        u.clamp(-self.max_torque, self.max_torque)
    }
}

pub(super) fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}
