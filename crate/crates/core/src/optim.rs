//! Policy improvement on fictitious trajectories: backpropagation through
//! time, vanilla policy gradient and a trust-region natural-gradient step.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsModel, PredictionCache};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::numerics::rng::Rng as StreamRng;
use crate::numerics::{clip_by_global_norm, AdamState, GradientBundle};
use crate::policy::GaussianPolicy;
use crate::rollout::{SamplingMode, TrajectoryBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Bptt,
    Vpg,
    Trpo,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Bptt => "bptt",
            OptimizerKind::Vpg => "vpg",
            OptimizerKind::Trpo => "trpo",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bptt" => Ok(OptimizerKind::Bptt),
            "vpg" => Ok(OptimizerKind::Vpg),
            "trpo" => Ok(OptimizerKind::Trpo),
            other => Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub max_kl: f64,
    /// Fictitious timesteps per policy update.
    pub batch_timesteps: usize,
    pub bptt_learning_rate: f64,
    pub vpg_learning_rate: f64,
    pub clip_norm: f64,
    /// Discount used only for advantage estimation.
    pub gamma: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    /// Fisher-vector products inside conjugate gradient use every
    /// `fvp_stride`-th sample of the batch.
    pub fvp_stride: usize,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
    /// BPTT with the policy mean only (noise fixed at zero).
    pub bptt_deterministic: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Trpo,
            max_kl: 0.01,
            batch_timesteps: 10_000,
            bptt_learning_rate: 1e-3,
            vpg_learning_rate: 1e-2,
            clip_norm: 10.0,
            gamma: 0.99,
            cg_iters: 10,
            cg_damping: 0.1,
            fvp_stride: 5,
            backtrack_ratio: 0.5,
            max_backtracks: 10,
            bptt_deterministic: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.max_kl > 0.0) {
            return Err(Error::InvalidConfig("max_kl must be positive".into()));
        }
        if self.batch_timesteps < horizon {
            return Err(Error::InvalidConfig(format!(
                "fictitious batch of {} steps is shorter than the horizon {horizon}",
                self.batch_timesteps
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 1]".into()));
        }
        if self.fvp_stride == 0 {
            return Err(Error::InvalidConfig("fvp_stride must be positive".into()));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(Error::InvalidConfig("backtrack_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of fictitious trajectories per update.
    pub fn trajectories(&self, horizon: usize) -> usize {
        (self.batch_timesteps / horizon).max(1)
    }
}

/// Per-update diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    /// Mean undiscounted return of the batch the update was computed on.
    pub batch_return: f64,
    pub surrogate_improvement: f64,
    pub kl: f64,
    pub grad_norm: f64,
    /// Halvings before the accepted step; `None` if no step was taken.
    pub line_search_steps: Option<usize>,
    pub accepted: bool,
}

/// `Σ_{k≥t} γ^{k−t} r_k` for one trajectory.
pub fn discounted_reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    /// Per trajectory.
    pub reward_to_go: Vec<Vec<f64>>,
    /// Reward-to-go minus the per-timestep batch mean, in
    /// [`TrajectoryBatch::flatten`] order.
    pub centered: Vec<f64>,
    pub standardized: Vec<f64>,
}

pub fn compute_advantages(batch: &TrajectoryBatch, gamma: f64) -> Advantages {
    let n = batch.num_trajectories();
    let reward_to_go: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r: Vec<f64> = (0..batch.lengths[i]).map(|t| batch.rewards[t][i]).collect();
            discounted_reward_to_go(&r, gamma)
        })
        .collect();
    let horizon = batch.horizon();
    let mut sum = vec![0.0; horizon];
    let mut count = vec![0usize; horizon];
    for rtg in &reward_to_go {
        for (t, v) in rtg.iter().enumerate() {
            sum[t] += v;
            count[t] += 1;
        }
    }
    let mut centered = Vec::with_capacity(batch.total_steps());
    for rtg in &reward_to_go {
        for (t, v) in rtg.iter().enumerate() {
            centered.push(v - sum[t] / count[t] as f64);
        }
    }
    let standardized = standardize(&centered);
    Advantages {
        reward_to_go,
        centered,
        standardized,
    }
}

fn standardize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| (v - mean) / (std + 1e-8)).collect()
}

fn apply_adam(policy: &mut GaussianPolicy, adam: &mut AdamState, ascent: Vec<f64>, clip_norm: f64) -> Result<f64> {
    let bundle = GradientBundle::new(ascent, policy.param_shapes());
    let norm = bundle.global_norm();
    if !bundle.is_finite() {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    let clipped = clip_by_global_norm(&bundle, clip_norm);
    let descent: Vec<f64> = clipped.flat().iter().map(|g| -g).collect();
    let mut params = policy.params();
    adam.step(&mut params, &descent)?;
    policy.set_params(&params)?;
    Ok(norm)
}

/// Likelihood-ratio gradient ascent with Adam:
/// `(1/N) Σ ∇ log π(a_t|s_t) Â_t` over the batch's valid steps.
pub fn vpg_update(
    policy: &mut GaussianPolicy,
    adam: &mut AdamState,
    batch: &TrajectoryBatch,
    cfg: &OptimizerConfig,
) -> Result<UpdateStats> {
    let (states, actions) = batch.flatten();
    let adv = compute_advantages(batch, cfg.gamma).standardized;
    let stats = UpdateStats {
        batch_return: batch.mean_return(),
        ..UpdateStats::default()
    };
    if adv.iter().all(|a| *a == 0.0) {
        return Ok(stats);
    }
    let n = adv.len() as f64;
    let weights: Vec<f64> = adv.iter().map(|a| a / n).collect();
    let g = policy.score_gradient(states.view(), actions.view(), &weights);
    let old = policy.clone();
    let grad_norm = apply_adam(policy, adam, g, cfg.clip_norm)?;
    Ok(UpdateStats {
        grad_norm,
        kl: GaussianPolicy::kl_mean(&old, policy, states.view()),
        accepted: true,
        line_search_steps: Some(0),
        ..stats
    })
}

/// Solves `A x = b` for symmetric positive definite `A` given as a product.
/// Errors when the iteration meets non-positive or non-finite curvature.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], iters: usize, residual_tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..iters {
        if rr <= residual_tol {
            break;
        }
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::NonFinite(format!("conjugate gradient curvature {pap}")));
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x)
}

/// Importance-weighted surrogate `(1/N) Σ π_new/π_old · Â`.
fn surrogate(policy: &GaussianPolicy, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>, logp_old: &[f64], adv: &[f64]) -> f64 {
    let means = policy.mean_batch(states);
    let logp = policy.log_prob_with_means(means.view(), actions);
    logp.iter().zip(logp_old).zip(adv).map(|((l, lo), a)| (l - lo).exp() * a).sum::<f64>() / adv.len() as f64
}

/// Natural-gradient direction `(F + λI)⁻¹ g` by conjugate gradient.
pub fn natural_gradient_direction(
    policy: &GaussianPolicy,
    states: ArrayView2<'_, f64>,
    g: &[f64],
    cfg: &OptimizerConfig,
) -> Result<Vec<f64>> {
    let cache = policy.mean_net().forward_cached(states);
    conjugate_gradient(
        |v| {
            let mut out = policy.fisher_vector_product_cached(&cache, v);
            for (o, x) in out.iter_mut().zip(v) {
                *o += cfg.cg_damping * x;
            }
            out
        },
        g,
        cfg.cg_iters,
        1e-10,
    )
}

/// One trust-region step. Leaves the policy unchanged when the gradient is
/// zero, conjugate gradient breaks down, or no backtracked step satisfies
/// both positive surrogate improvement and `kl ≤ max_kl`.
pub fn trpo_update(policy: &mut GaussianPolicy, batch: &TrajectoryBatch, cfg: &OptimizerConfig) -> Result<UpdateStats> {
    let (states, actions) = batch.flatten();
    let adv = compute_advantages(batch, cfg.gamma).standardized;
    let mut stats = UpdateStats {
        batch_return: batch.mean_return(),
        ..UpdateStats::default()
    };
    let n = adv.len() as f64;
    let old = policy.clone();
    let old_means = old.mean_batch(states.view());
    let logp_old = old.log_prob_with_means(old_means.view(), actions.view());
    let weights: Vec<f64> = adv.iter().map(|a| a / n).collect();
    let g = old.score_gradient(states.view(), actions.view(), &weights);
    stats.grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !stats.grad_norm.is_finite() {
        return Err(Error::NonFinite("TRPO surrogate gradient".into()));
    }
    if stats.grad_norm == 0.0 {
        return Ok(stats);
    }
    let fvp_states = states.slice(s![..;cfg.fvp_stride, ..]);
    let direction = match natural_gradient_direction(&old, fvp_states, &g, cfg) {
        Ok(x) => x,
        Err(e) => {
            log::warn!("TRPO step skipped: {e}");
            return Ok(stats);
        }
    };
    let cache = old.mean_net().forward_cached(fvp_states);
    let fx = old.fisher_vector_product_cached(&cache, &direction);
    let shs: f64 = direction.iter().zip(&fx).map(|(a, b)| a * b).sum::<f64>()
        + cfg.cg_damping * direction.iter().map(|x| x * x).sum::<f64>();
    if !(shs > 0.0) || !shs.is_finite() {
        log::warn!("TRPO step skipped: step curvature {shs}");
        return Ok(stats);
    }
    let scale = (2.0 * cfg.max_kl / shs).sqrt();
    let theta_old = old.params();
    let surr_old = surrogate(&old, states.view(), actions.view(), &logp_old, &adv);
    let mut frac = 1.0;
    let mut candidate = old.clone();
    for k in 0..=cfg.max_backtracks {
        let theta: Vec<f64> = theta_old.iter().zip(&direction).map(|(t, d)| t + frac * scale * d).collect();
        if candidate.set_params(&theta).is_ok() {
            let improvement = surrogate(&candidate, states.view(), actions.view(), &logp_old, &adv) - surr_old;
            let kl = GaussianPolicy::kl_mean(&old, &candidate, states.view());
            if improvement > 0.0 && kl <= cfg.max_kl && kl.is_finite() {
                *policy = candidate;
                stats.surrogate_improvement = improvement;
                stats.kl = kl;
                stats.line_search_steps = Some(k);
                stats.accepted = true;
                return Ok(stats);
            }
        }
        frac *= cfg.backtrack_ratio;
    }
    Ok(stats)
}

/// Forward record of one step, kept for the reverse sweep.
struct StepRecord {
    states: Array2<f64>,
    policy_cache: crate::numerics::ForwardCache,
    noise: Array2<f64>,
    actions: Array2<f64>,
    clipped: Array2<f64>,
    /// `(member, rows, cache)` for each member used at this step.
    model_caches: Vec<(usize, Vec<usize>, PredictionCache)>,
}

/// Gradient of the mean simulated return `(1/N) Σ_i Σ_t r(s_t, a_t)` with the
/// noise vectors held fixed, by reverse-mode through policy, action clipping,
/// reward and the chained model predictions. Uses the same random streams as
/// [`crate::rollout::simulate_fictitious`], so the trajectories coincide.
/// Returns `(mean return, gradient)`.
#[allow(clippy::too_many_arguments)]
pub fn bptt_gradient(
    env: &EnvSpec,
    members: &[DynamicsModel],
    policy: &GaussianPolicy,
    init_states: &[Vec<f64>],
    horizon: usize,
    mode: SamplingMode,
    deterministic: bool,
    rng: &mut StreamRng,
) -> Result<(f64, Vec<f64>)> {
    if !mode.selects_member() {
        return Err(Error::Unsupported(format!("BPTT through sampling mode `{mode}`")));
    }
    if members.is_empty() || init_states.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let SamplingMode::OneModel(k) = mode {
        if k >= members.len() {
            return Err(Error::InvalidConfig(format!("one_model index {k} out of range for K={}", members.len())));
        }
    }
    let (n, m) = (env.state_dim(), env.action_dim());
    let batch = init_states.len();
    let k_total = members.len();
    let inv_n = 1.0 / batch as f64;
    let bound = env.action_bound();
    let mut noise_rng = StreamRng::seed_from_u64(rng.random());
    let mut select_rng = StreamRng::seed_from_u64(rng.random());
    let episode_member: Vec<usize> = match mode {
        SamplingMode::EpsRand => (0..batch).map(|_| select_rng.random_range(0..k_total)).collect(),
        _ => Vec::new(),
    };
    let std = policy.std();

    let mut s = Array2::zeros((batch, n));
    for (mut row, v) in s.rows_mut().into_iter().zip(init_states) {
        for j in 0..n {
            row[j] = v[j];
        }
    }
    let mut alive_len = vec![horizon; batch];
    let mut alive = vec![true; batch];
    let mut total_return = 0.0;
    let mut records = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let policy_cache = policy.mean_net().forward_cached(s.view());
        let mut noise = Array2::zeros((batch, m));
        if !deterministic {
            noise.mapv_inplace(|_| noise_rng.sample(StandardNormal));
        }
        let mut actions = policy_cache.output().clone();
        for (mut row, z) in actions.rows_mut().into_iter().zip(noise.rows()) {
            for j in 0..m {
                row[j] += std[j] * z[j];
            }
        }
        let clipped = actions.mapv(|x| x.clamp(-bound, bound));
        let assign: Vec<usize> = match mode {
            SamplingMode::StepRand => (0..batch).map(|_| select_rng.random_range(0..k_total)).collect(),
            SamplingMode::EpsRand => episode_member.clone(),
            SamplingMode::OneModel(k) => vec![k; batch],
            _ => unreachable!(),
        };
        let mut next = Array2::zeros((batch, n));
        let mut model_caches = Vec::new();
        for (k, model) in members.iter().enumerate() {
            let rows: Vec<usize> = (0..batch).filter(|&i| assign[i] == k).collect();
            if rows.is_empty() {
                continue;
            }
            let (pred, cache) =
                model.predict_batch_cached(s.select(Axis(0), &rows).view(), clipped.select(Axis(0), &rows).view());
            for (j, &i) in rows.iter().enumerate() {
                next.row_mut(i).assign(&pred.row(j));
            }
            model_caches.push((k, rows, cache));
        }
        for i in 0..batch {
            if !alive[i] {
                next.row_mut(i).fill(0.0);
                continue;
            }
            if next.row(i).iter().all(|x| x.is_finite()) {
                total_return += env.reward(&s.row(i).to_vec(), &clipped.row(i).to_vec());
            } else {
                alive[i] = false;
                alive_len[i] = t;
                next.row_mut(i).fill(0.0);
            }
        }
        records.push(StepRecord {
            states: s,
            policy_cache,
            noise,
            actions,
            clipped,
            model_caches,
        });
        s = next;
    }

    let n_net = policy.num_net_params();
    let mut grad = vec![0.0; policy.num_params()];
    let mut lambda = Array2::<f64>::zeros((batch, n));
    for t in (0..horizon).rev() {
        let rec = &records[t];
        for i in 0..batch {
            if t + 1 >= alive_len[i] {
                lambda.row_mut(i).fill(0.0);
            }
        }
        let mut ds = Array2::<f64>::zeros((batch, n));
        let mut da = Array2::<f64>::zeros((batch, m));
        for (k, rows, cache) in &rec.model_caches {
            let up = lambda.select(Axis(0), rows);
            let (gs, ga) = members[*k].vjp(cache, up.view());
            for (j, &i) in rows.iter().enumerate() {
                ds.row_mut(i).assign(&gs.row(j));
                da.row_mut(i).assign(&ga.row(j));
            }
        }
        for i in 0..batch {
            if t >= alive_len[i] {
                ds.row_mut(i).fill(0.0);
                da.row_mut(i).fill(0.0);
                continue;
            }
            let (rs, ra) = env.reward_grad(&rec.states.row(i).to_vec(), &rec.clipped.row(i).to_vec());
            for j in 0..n {
                ds[[i, j]] += inv_n * rs[j];
            }
            for j in 0..m {
                da[[i, j]] += inv_n * ra[j];
                // clamp passes gradient only strictly inside the bounds
                if rec.actions[[i, j]].abs() > bound {
                    da[[i, j]] = 0.0;
                }
            }
        }
        let mut net_grad = vec![0.0; n_net];
        let ds_policy = policy
            .mean_net()
            .backward_accumulate(&rec.policy_cache, da.view(), &mut net_grad, true)
            .expect("input gradient requested");
        for (g, x) in grad[..n_net].iter_mut().zip(&net_grad) {
            *g += x;
        }
        for j in 0..m {
            grad[n_net + j] += (0..batch).map(|i| da[[i, j]] * std[j] * rec.noise[[i, j]]).sum::<f64>();
        }
        lambda = ds + ds_policy;
    }
    Ok((total_return * inv_n, grad))
}

/// Identifies the piecewise-linear region a fictitious rollout passes
/// through: action-clip flags and model ReLU signs at every step. Finite
/// differences across parameters are only meaningful between rollouts with
/// equal signatures.
#[allow(clippy::too_many_arguments)]
pub fn rollout_region_signature(
    env: &EnvSpec,
    members: &[DynamicsModel],
    policy: &GaussianPolicy,
    init_states: &[Vec<f64>],
    horizon: usize,
    mode: SamplingMode,
    deterministic: bool,
    rng: &mut StreamRng,
) -> Result<Vec<bool>> {
    let batch = crate::rollout::simulate_fictitious(env, members, policy, init_states, horizon, mode, deterministic, rng)?;
    let bound = env.action_bound();
    let mut signature = Vec::new();
    for t in 0..batch.horizon() {
        let clipped = batch.actions[t].mapv(|x| x.clamp(-bound, bound));
        signature.extend(batch.actions[t].iter().map(|a| a.abs() > bound));
        for (k, model) in members.iter().enumerate() {
            let rows: Vec<usize> = (0..batch.num_trajectories())
                .filter(|&i| t < batch.lengths[i] && batch.model_indices[t][i].is_none_or(|j| j == k))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let s = batch.states[t].select(Axis(0), &rows);
            let a = clipped.select(Axis(0), &rows);
            signature.extend(model.relu_pattern(s.view(), a.view()));
        }
    }
    Ok(signature)
}

/// BPTT ascent step with global-norm clipping and Adam.
#[allow(clippy::too_many_arguments)]
pub fn bptt_update(
    env: &EnvSpec,
    members: &[DynamicsModel],
    policy: &mut GaussianPolicy,
    adam: &mut AdamState,
    init_states: &[Vec<f64>],
    horizon: usize,
    mode: SamplingMode,
    cfg: &OptimizerConfig,
    rng: &mut StreamRng,
) -> Result<UpdateStats> {
    let (ret, grad) = bptt_gradient(env, members, policy, init_states, horizon, mode, cfg.bptt_deterministic, rng)?;
    let grad_norm = apply_adam(policy, adam, grad, cfg.clip_norm)?;
    Ok(UpdateStats {
        batch_return: ret,
        grad_norm,
        accepted: true,
        line_search_steps: Some(0),
        ..UpdateStats::default()
    })
}
