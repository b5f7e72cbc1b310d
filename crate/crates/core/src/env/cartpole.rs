use rand::Rng;

use super::pendulum::symmetric_uniform;
use super::{circle_cos, rotate, unit_circle};

/// Cart-pole swing-up on an unbounded track. State is
/// `(x, ẋ, cos θ, sin θ, θ̇)` with θ measured from upright; action is the
/// horizontal force on the cart.
#[derive(Clone, Debug, PartialEq)]
pub struct CartPole {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's center of mass.
    pub half_length: f64,
    pub max_force: f64,
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
    pub angle_cost: f64,
    pub position_cost: f64,
    pub action_cost: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            max_force: 10.0,
            dt: 0.05,
            substeps: 2,
            horizon: 200,
            angle_cost: 1.0,
            position_cost: 0.05,
            action_cost: 0.0005,
        }
    }
}

impl CartPole {
    fn accelerations(&self, sin_t: f64, cos_t: f64, w: f64, force: f64) -> (f64, f64) {
        let total = self.cart_mass + self.pole_mass;
        let temp = (force + self.pole_mass * self.half_length * w * w * sin_t) / total;
        let theta_acc = (self.gravity * sin_t - cos_t * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos_t * cos_t / total));
        let x_acc = temp - self.pole_mass * self.half_length * theta_acc * cos_t / total;
        (x_acc, theta_acc)
    }

    pub(super) fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (mut x, mut v) = (s[0], s[1]);
        let (mut c, mut sn) = unit_circle(s[2], s[3]);
        let mut w = s[4];
        let h = self.dt / self.substeps as f64;
        for _ in 0..self.substeps {
            let (x_acc, theta_acc) = self.accelerations(sn, c, w, a[0]);
            v += h * x_acc;
            x += h * v;
            w += h * theta_acc;
            (c, sn) = rotate(c, sn, h * w);
        }
        vec![x, v, c, sn, w]
    }

    pub(super) fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        let (cos, _) = circle_cos(s[2], s[3]);
        -(self.angle_cost * (1.0 - cos) + self.position_cost * s[0] * s[0] + self.action_cost * a[0] * a[0])
    }

    pub(super) fn reward_grad(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (_, g) = circle_cos(s[2], s[3]);
        (
            vec![-2.0 * self.position_cost * s[0], 0.0, self.angle_cost * g[0], self.angle_cost * g[1], 0.0],
            vec![-2.0 * self.action_cost * a[0]],
        )
    }

    pub(super) fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let x = symmetric_uniform(rng, 0.1);
        let theta = std::f64::consts::PI + symmetric_uniform(rng, 0.1);
        let w = symmetric_uniform(rng, 0.1);
        vec![x, 0.0, theta.cos(), theta.sin(), w]
    }
}
