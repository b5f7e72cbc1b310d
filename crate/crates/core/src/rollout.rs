//! Real-environment data collection with exploration noise, and fictitious
//! rollouts through a learned ensemble.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dataset, DynamicsModel};
use crate::env::{EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::numerics::rng::Rng as StreamRng;
use crate::policy::GaussianPolicy;

/// How the next fictitious state is chosen from the ensemble's predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// A uniformly drawn member at every step.
    StepRand,
    /// A draw from the per-dimension Gaussian fitted to the member predictions.
    ModelMeanStd,
    ModelMean,
    /// Per-dimension median.
    ModelMed,
    /// One uniformly drawn member per trajectory.
    EpsRand,
    /// The designated member throughout.
    OneModel(usize),
}

pub const SAMPLING_MODES: [&str; 6] = ["step_rand", "model_mean_std", "model_mean", "model_med", "eps_rand", "one_model"];

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingMode::StepRand => write!(f, "step_rand"),
            SamplingMode::ModelMeanStd => write!(f, "model_mean_std"),
            SamplingMode::ModelMean => write!(f, "model_mean"),
            SamplingMode::ModelMed => write!(f, "model_med"),
            SamplingMode::EpsRand => write!(f, "eps_rand"),
            SamplingMode::OneModel(0) => write!(f, "one_model"),
            SamplingMode::OneModel(k) => write!(f, "one_model:{k}"),
        }
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    /// Accepts the mode names; `one_model` takes an optional `:k` member index.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "step_rand" => SamplingMode::StepRand,
            "model_mean_std" => SamplingMode::ModelMeanStd,
            "model_mean" => SamplingMode::ModelMean,
            "model_med" => SamplingMode::ModelMed,
            "eps_rand" => SamplingMode::EpsRand,
            "one_model" => SamplingMode::OneModel(0),
            other => match other.strip_prefix("one_model:").map(str::parse) {
                Some(Ok(k)) => SamplingMode::OneModel(k),
                _ => return Err(Error::InvalidConfig(format!("unknown sampling mode `{other}`"))),
            },
        })
    }
}

impl SamplingMode {
    /// Modes where each step follows exactly one member.
    pub fn selects_member(&self) -> bool {
        matches!(self, SamplingMode::StepRand | SamplingMode::EpsRand | SamplingMode::OneModel(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub std_range: (f64, f64),
    pub param_noise_scale: f64,
    pub timesteps_per_iteration: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            std_range: (0.0, 3.0),
            param_noise_scale: 1.0,
            timesteps_per_iteration: 3000,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.std_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("exploration std range [{lo}, {hi}]")));
        }
        if !(self.param_noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("param_noise_scale must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Runs whole episodes on the real system until at least
/// `timesteps_per_iteration` steps are collected. Each episode uses a fresh
/// action std drawn from `std_range` and, when `previous_params` is given,
/// mean-network parameters perturbed with per-parameter std
/// `param_noise_scale · |θ − θ_prev|`. The learned policy is left untouched.
pub fn collect_real_samples(
    env: &EnvSpec,
    policy: &GaussianPolicy,
    previous_params: Option<&[f64]>,
    explore: &ExplorationConfig,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<Transition>>> {
    explore.validate()?;
    let horizon = env.horizon();
    let n_episodes = explore.timesteps_per_iteration.div_ceil(horizon);
    let current = policy.params();
    let n_net = policy.num_net_params();
    if let Some(prev) = previous_params {
        if prev.len() != current.len() {
            return Err(Error::DimensionMismatch {
                context: "collect_real_samples previous params",
                expected: current.len(),
                got: prev.len(),
            });
        }
    }
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let (lo, hi) = explore.std_range;
        let std = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut explorer = policy.clone();
        if let Some(prev) = previous_params {
            let mut theta = current.clone();
            for i in 0..n_net {
                let sd = explore.param_noise_scale * (current[i] - prev[i]).abs();
                if sd > 0.0 {
                    theta[i] += sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            explorer.set_params(&theta)?;
        }
        let mut s = env.sample_initial_state(rng);
        let mut episode = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut a = explorer.mean_action(&s)?;
            if std > 0.0 {
                for x in a.iter_mut() {
                    *x += std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let a = env.clip_action(&a);
            let s_next = env.step(&s, &a)?;
            episode.push(Transition {
                s: std::mem::take(&mut s),
                a,
                s_next: s_next.clone(),
            });
            s = s_next;
        }
        episodes.push(episode);
    }
    Ok(episodes)
}

/// Extends `dataset` with new episodes, keeping the persistent 2:1 episode
/// split, and checks the result is usable for model training.
pub fn split_dataset(dataset: &mut Dataset, episodes: Vec<Vec<Transition>>, rng: &mut StreamRng) -> Result<()> {
    dataset.add_episodes(episodes, rng);
    dataset.check_split()
}

/// Draws `n` states uniformly with replacement from `pool`.
pub fn sample_start_states(pool: &[Vec<f64>], n: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect())
}

/// Fictitious trajectories stored time-major: row `i` of `states[t]` is
/// trajectory `i` at step `t`. Entries at `t >= lengths[i]` are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub states: Vec<Array2<f64>>,
    /// Unclipped policy samples; the environment and reward see the clipped
    /// action.
    pub actions: Vec<Array2<f64>>,
    pub noise: Vec<Array2<f64>>,
    pub rewards: Vec<Vec<f64>>,
    /// Member used for each transition; `None` when predictions were
    /// aggregated across members.
    pub model_indices: Vec<Vec<Option<usize>>>,
    pub lengths: Vec<usize>,
}

impl TrajectoryBatch {
    pub fn num_trajectories(&self) -> usize {
        self.lengths.len()
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn total_steps(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Undiscounted return of each trajectory.
    pub fn returns(&self) -> Vec<f64> {
        (0..self.num_trajectories())
            .map(|i| (0..self.lengths[i]).map(|t| self.rewards[t][i]).sum())
            .collect()
    }

    pub fn mean_return(&self) -> f64 {
        let r = self.returns();
        r.iter().sum::<f64>() / r.len() as f64
    }

    /// Valid `(state, action)` rows in trajectory-major order.
    pub fn flatten(&self) -> (Array2<f64>, Array2<f64>) {
        let n = self.states.first().map_or(0, |x| x.ncols());
        let m = self.actions.first().map_or(0, |x| x.ncols());
        let total = self.total_steps();
        let mut s = Array2::zeros((total, n));
        let mut a = Array2::zeros((total, m));
        let mut row = 0;
        for i in 0..self.num_trajectories() {
            for t in 0..self.lengths[i] {
                s.row_mut(row).assign(&self.states[t].row(i));
                a.row_mut(row).assign(&self.actions[t].row(i));
                row += 1;
            }
        }
        (s, a)
    }
}

fn rows_to_array(rows: &[Vec<f64>], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut r, v) in out.rows_mut().into_iter().zip(rows) {
        r.assign(&ArrayView2::from_shape((1, dim), v).unwrap().row(0));
    }
    out
}

/// Predictions of `members[k]` for the rows where `assign == Some(k)`.
fn predict_assigned(
    members: &[DynamicsModel],
    states: &Array2<f64>,
    actions: &Array2<f64>,
    assign: &[Option<usize>],
) -> Array2<f64> {
    let mut out = Array2::from_elem(states.raw_dim(), f64::NAN);
    for (k, model) in members.iter().enumerate() {
        let rows: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == Some(k)).collect();
        if rows.is_empty() {
            continue;
        }
        let pred = model.predict_batch(states.select(Axis(0), &rows).view(), actions.select(Axis(0), &rows).view());
        for (j, &i) in rows.iter().enumerate() {
            out.row_mut(i).assign(&pred.row(j));
        }
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Rolls `policy` through the ensemble from each start state for `horizon`
/// steps. Rewards come from the known reward on simulated states. With
/// `deterministic`, actions are the policy mean (noise fixed at zero).
///
/// Policy noise and member selection draw from separate streams seeded from
/// `rng`, so a single-member ensemble yields the same trajectories in every
/// mode. A trajectory whose predicted state turns non-finite is truncated
/// before that transition.
pub fn simulate_fictitious(
    env: &EnvSpec,
    members: &[DynamicsModel],
    policy: &GaussianPolicy,
    init_states: &[Vec<f64>],
    horizon: usize,
    mode: SamplingMode,
    deterministic: bool,
    rng: &mut StreamRng,
) -> Result<TrajectoryBatch> {
    if members.is_empty() {
        return Err(Error::InvalidConfig("empty ensemble".into()));
    }
    if init_states.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let SamplingMode::OneModel(k) = mode {
        if k >= members.len() {
            return Err(Error::InvalidConfig(format!("one_model index {k} out of range for K={}", members.len())));
        }
    }
    let (n, m) = (env.state_dim(), env.action_dim());
    let k_total = members.len();
    let batch = init_states.len();
    let mut noise_rng = StreamRng::seed_from_u64(rng.random());
    let mut select_rng = StreamRng::seed_from_u64(rng.random());

    let episode_member: Vec<usize> = match mode {
        SamplingMode::EpsRand => (0..batch).map(|_| select_rng.random_range(0..k_total)).collect(),
        _ => Vec::new(),
    };
    let std = policy.std();
    let mut s = rows_to_array(init_states, n);
    let mut alive = vec![true; batch];
    let mut lengths = vec![0usize; batch];
    let mut out = TrajectoryBatch {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        noise: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        model_indices: Vec::with_capacity(horizon),
        lengths: Vec::new(),
    };

    for t in 0..horizon {
        let mean = policy.mean_batch(s.view());
        let mut zeta = Array2::zeros((batch, m));
        if !deterministic {
            zeta.mapv_inplace(|_| noise_rng.sample(StandardNormal));
        }
        let mut a = mean.clone();
        for (mut row, z) in a.rows_mut().into_iter().zip(zeta.rows()) {
            for j in 0..m {
                row[j] += std[j] * z[j];
            }
        }
        let bound = env.action_bound();
        let clipped = a.mapv(|x| x.clamp(-bound, bound));
        let rewards: Vec<f64> = (0..batch)
            .map(|i| if alive[i] { env.reward(&s.row(i).to_vec(), &clipped.row(i).to_vec()) } else { 0.0 })
            .collect();

        let assign: Vec<Option<usize>> = match mode {
            SamplingMode::StepRand => (0..batch).map(|_| Some(select_rng.random_range(0..k_total))).collect(),
            SamplingMode::EpsRand => episode_member.iter().map(|&k| Some(k)).collect(),
            SamplingMode::OneModel(k) => vec![Some(k); batch],
            _ => vec![None; batch],
        };
        let next = if mode.selects_member() {
            predict_assigned(members, &s, &clipped, &assign)
        } else {
            let preds: Vec<Array2<f64>> = members.iter().map(|mdl| mdl.predict_batch(s.view(), clipped.view())).collect();
            let mut next = Array2::zeros((batch, n));
            let mut column = vec![0.0; k_total];
            for i in 0..batch {
                for j in 0..n {
                    for (c, p) in column.iter_mut().zip(&preds) {
                        *c = p[[i, j]];
                    }
                    // shifted by the first member so identical predictions average exactly
                    let c0 = column[0];
                    let mu = c0 + column.iter().map(|c| c - c0).sum::<f64>() / k_total as f64;
                    next[[i, j]] = match mode {
                        SamplingMode::ModelMean => mu,
                        SamplingMode::ModelMed => median(&mut column),
                        SamplingMode::ModelMeanStd => {
                            let sd = if k_total > 1 {
                                (column.iter().map(|c| (c - mu) * (c - mu)).sum::<f64>() / (k_total - 1) as f64).sqrt()
                            } else {
                                0.0
                            };
                            if sd > 0.0 && sd.is_finite() {
                                select_rng.sample(Normal::new(mu, sd).unwrap())
                            } else {
                                mu
                            }
                        }
                        _ => unreachable!(),
                    };
                }
            }
            next
        };

        out.states.push(s);
        out.actions.push(a);
        out.noise.push(zeta);
        out.rewards.push(rewards);
        out.model_indices.push(assign);
        let mut next = next;
        for i in 0..batch {
            if !alive[i] {
                next.row_mut(i).fill(0.0);
                continue;
            }
            if next.row(i).iter().all(|x| x.is_finite()) {
                lengths[i] = t + 1;
            } else {
                log::warn!("fictitious trajectory {i} truncated at step {t}: non-finite model prediction");
                alive[i] = false;
                next.row_mut(i).fill(0.0);
            }
        }
        s = next;
    }
    out.lengths = lengths;
    Ok(out)
}

/// Monte-Carlo estimate of the return of `policy` inside a single model.
pub fn estimate_model_return(
    env: &EnvSpec,
    model: &DynamicsModel,
    policy: &GaussianPolicy,
    init_states: &[Vec<f64>],
    horizon: usize,
    deterministic: bool,
    rng: &mut StreamRng,
) -> Result<f64> {
    let batch = simulate_fictitious(
        env,
        std::slice::from_ref(model),
        policy,
        init_states,
        horizon,
        SamplingMode::OneModel(0),
        deterministic,
        rng,
    )?;
    Ok(batch.mean_return())
}

/// `η̂` under every member, each with the same random stream so that
/// differences reflect the models rather than the sampled noise.
pub fn estimate_member_returns(
    env: &EnvSpec,
    members: &[DynamicsModel],
    policy: &GaussianPolicy,
    init_states: &[Vec<f64>],
    horizon: usize,
    deterministic: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    members
        .iter()
        .map(|model| {
            let mut rng = StreamRng::seed_from_u64(seed);
            estimate_model_return(env, model, policy, init_states, horizon, deterministic, &mut rng)
        })
        .collect()
}

/// On-policy episodes on the real system from fresh initial states, in the
/// same layout as fictitious batches. Used by the model-free baseline.
pub fn rollout_real(env: &EnvSpec, policy: &GaussianPolicy, n_episodes: usize, rng: &mut StreamRng) -> Result<TrajectoryBatch> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("rollout_real needs at least one episode".into()));
    }
    let (n, m, horizon) = (env.state_dim(), env.action_dim(), env.horizon());
    let starts = env.sample_initial_states(n_episodes, rng);
    let std = policy.std();
    let mut s = rows_to_array(&starts, n);
    let mut out = TrajectoryBatch {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        noise: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        model_indices: Vec::with_capacity(horizon),
        lengths: vec![horizon; n_episodes],
    };
    for _ in 0..horizon {
        let mut a = policy.mean_batch(s.view());
        let mut zeta = Array2::zeros((n_episodes, m));
        zeta.mapv_inplace(|_: f64| rng.sample(StandardNormal));
        for (mut row, z) in a.rows_mut().into_iter().zip(zeta.rows()) {
            for j in 0..m {
                row[j] += std[j] * z[j];
            }
        }
        let mut next = Array2::zeros((n_episodes, n));
        let mut rewards = Vec::with_capacity(n_episodes);
        for i in 0..n_episodes {
            let si = s.row(i).to_vec();
            let ai = env.clip_action(&a.row(i).to_vec());
            rewards.push(env.reward(&si, &ai));
            let sn = env.step(&si, &ai)?;
            next.row_mut(i).assign(&ArrayView2::from_shape((1, n), &sn).unwrap().row(0));
        }
        out.states.push(s);
        out.actions.push(a);
        out.noise.push(zeta);
        out.rewards.push(rewards);
        out.model_indices.push(vec![None; n_episodes]);
        s = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
