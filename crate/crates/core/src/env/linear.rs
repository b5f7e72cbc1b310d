use rand::Rng;

/// `s' = s + gain·a`, a realizable test system for model learning.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub dim: usize,
    pub gain: f64,
    pub max_action: f64,
    pub horizon: usize,
    pub state_cost: f64,
    pub action_cost: f64,
    pub init_box: f64,
}

impl Default for LinearSystem {
    fn default() -> Self {
        Self {
            dim: 2,
            gain: 0.1,
            max_action: 1.0,
            horizon: 50,
            state_cost: 1.0,
            action_cost: 0.1,
            init_box: 1.0,
        }
    }
}

impl LinearSystem {
    pub(super) fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        s.iter().zip(a).map(|(x, u)| x + self.gain * u).collect()
    }

    pub(super) fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        let ss: f64 = s.iter().map(|x| x * x).sum();
        let aa: f64 = a.iter().map(|x| x * x).sum();
        -(self.state_cost * ss + self.action_cost * aa)
    }

    pub(super) fn reward_grad(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            s.iter().map(|x| -2.0 * self.state_cost * x).collect(),
            a.iter().map(|x| -2.0 * self.action_cost * x).collect(),
        )
    }

    pub(super) fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.init_box;
        (0..self.dim).map(|_| rng.random_range(-b..=b)).collect()
    }
}
