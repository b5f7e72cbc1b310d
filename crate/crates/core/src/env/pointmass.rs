use rand::Rng;

/// Planar point mass pushed toward a fixed goal. State is
/// `(x, y, vx, vy)`, action is a 2-D force.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub mass: f64,
    pub damping: f64,
    pub max_force: f64,
    pub dt: f64,
    pub horizon: usize,
    pub goal: [f64; 2],
    /// Half-width of the square the start position is drawn from.
    pub init_box: f64,
    pub action_cost: f64,
    /// Smoothing length in the goal direction so the reward stays
    /// differentiable at the goal.
    pub goal_smoothing: f64,
}

impl Default for PointMass {
    fn default() -> Self {
        Self {
            mass: 1.0,
            damping: 0.1,
            max_force: 1.0,
            dt: 0.05,
            horizon: 100,
            goal: [0.0, 0.0],
            init_box: 2.0,
            action_cost: 0.005,
            goal_smoothing: 0.05,
        }
    }
}

impl PointMass {
    pub(super) fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let vx = s[2] + self.dt * (a[0] / self.mass - self.damping * s[2]);
        let vy = s[3] + self.dt * (a[1] / self.mass - self.damping * s[3]);
        vec![s[0] + self.dt * vx, s[1] + self.dt * vy, vx, vy]
    }

    /// Velocity toward the goal minus a quadratic action cost.
    pub(super) fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        let (dx, dy) = (self.goal[0] - s[0], self.goal[1] - s[1]);
        let dist = (dx * dx + dy * dy + self.goal_smoothing * self.goal_smoothing).sqrt();
        let progress = (s[2] * dx + s[3] * dy) / dist;
        progress - self.action_cost * (a[0] * a[0] + a[1] * a[1])
    }

    pub(super) fn reward_grad(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (dx, dy) = (self.goal[0] - s[0], self.goal[1] - s[1]);
        let d2 = dx * dx + dy * dy + self.goal_smoothing * self.goal_smoothing;
        let dist = d2.sqrt();
        let dot = s[2] * dx + s[3] * dy;
        // d/dp of (v·(g-p))/|g-p|_eps
        let gx = -s[2] / dist + dot * dx / (d2 * dist);
        let gy = -s[3] / dist + dot * dy / (d2 * dist);
        (
            vec![gx, gy, dx / dist, dy / dist],
            vec![-2.0 * self.action_cost * a[0], -2.0 * self.action_cost * a[1]],
        )
    }

    pub(super) fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.init_box;
        vec![rng.random_range(-b..=b), rng.random_range(-b..=b), 0.0, 0.0]
    }
}
