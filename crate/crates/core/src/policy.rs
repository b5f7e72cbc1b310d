//! Diagonal Gaussian policy with a state-independent learnable log-std.
//!
//! The flat parameter vector is the mean network's parameters followed by
//! `log_std`. All gradient helpers return vectors in that layout.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use std::path::Path;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::numerics::{load_params, save_params, Activation, Mlp, ParamShape};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    mean_net: Mlp,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    /// Tanh hidden layers, linear output scaled down so the initial mean is
    /// near zero, and unit standard deviation.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut mean_net = Mlp::new(&sizes, Activation::Tanh, Activation::Identity, rng)?;
        let last = mean_net.num_layers() - 1;
        mean_net.scale_layer(last, 0.01);
        Ok(Self {
            mean_net,
            log_std: vec![0.0; action_dim],
        })
    }

    pub fn from_parts(mean_net: Mlp, log_std: Vec<f64>) -> Result<Self> {
        check_dim("GaussianPolicy log_std", mean_net.output_dim(), log_std.len())?;
        check_finite("GaussianPolicy log_std", &log_std)?;
        Ok(Self { mean_net, log_std })
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn set_log_std(&mut self, log_std: &[f64]) -> Result<()> {
        check_dim("GaussianPolicy::set_log_std", self.log_std.len(), log_std.len())?;
        self.log_std.copy_from_slice(log_std);
        Ok(())
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_net_params(&self) -> usize {
        self.mean_net.num_params()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.log_std.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("GaussianPolicy::set_params", self.num_params(), params.len())?;
        let n = self.mean_net.num_params();
        self.mean_net.set_params(&params[..n])?;
        check_finite("GaussianPolicy log_std", &params[n..])?;
        self.log_std.copy_from_slice(&params[n..]);
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let mut shapes = self.mean_net.param_shapes();
        shapes.push(ParamShape::new("log_std", vec![self.log_std.len()], self.mean_net.num_params()));
        shapes
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "gaussian_policy",
            "layer_sizes": self.mean_net.layer_sizes(),
            "hidden_activation": self.mean_net.hidden_activation(),
            "output_activation": self.mean_net.output_activation(),
        });
        save_params(dir, name, &self.params(), self.param_shapes(), meta)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (manifest, values) = load_params(dir, name)?;
        let meta = &manifest.metadata;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("{name}: missing `{k}`")));
        let sizes: Vec<usize> = serde_json::from_value(field("layer_sizes")?)?;
        let hidden: Activation = serde_json::from_value(field("hidden_activation")?)?;
        let output: Activation = serde_json::from_value(field("output_activation")?)?;
        let mean_net = Mlp::zeros(&sizes, hidden, output)?;
        let action_dim = mean_net.output_dim();
        let mut policy = Self::from_parts(mean_net, vec![0.0; action_dim])?;
        policy.set_params(&values)?;
        Ok(policy)
    }

    /// `(μ(s), σ)`.
    pub fn action_distribution(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mean = self.mean_net.apply(s)?;
        let std = self.std();
        check_finite("policy std", &std)?;
        Ok((mean, std))
    }

    pub fn mean_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.apply(s)
    }

    pub fn mean_batch(&self, states: ArrayView2<'_, f64>) -> Array2<f64> {
        self.mean_net.forward(states)
    }

    /// `μ(s) + σ ⊙ ζ`.
    pub fn reparametrized_action(&self, s: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        check_dim("reparametrized_action noise", self.action_dim(), noise.len())?;
        let mean = self.mean_net.apply(s)?;
        Ok(mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, l), z)| m + l.exp() * z)
            .collect())
    }

    /// Gradient of `upstream · a(θ)` for the reparametrized action.
    pub fn reparametrized_action_grad(&self, s: &[f64], noise: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_dim("reparametrized_action_grad noise", self.action_dim(), noise.len())?;
        let (g, _) = self.mean_net.backward_single(s, upstream)?;
        let mut out = g.into_flat();
        out.extend(
            self.log_std
                .iter()
                .zip(noise)
                .zip(upstream)
                .map(|((l, z), u)| u * l.exp() * z),
        );
        Ok(out)
    }

    /// Draws `a ~ π(·|s)`; returns the action and the standard-normal noise.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let noise: Vec<f64> = (0..self.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let a = self.reparametrized_action(s, &noise)?;
        Ok((a, noise))
    }

    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        check_dim("log_prob action", self.action_dim(), a.len())?;
        let mean = self.mean_net.apply(s)?;
        Ok(diag_gaussian_log_prob(&mean, &self.log_std, a))
    }

    /// Log-densities for a batch given precomputed means.
    pub fn log_prob_with_means(&self, means: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Vec<f64> {
        means
            .rows()
            .into_iter()
            .zip(actions.rows())
            .map(|(m, a)| {
                let mut lp = 0.0;
                for ((mu, x), l) in m.iter().zip(a.iter()).zip(&self.log_std) {
                    let z = (x - mu) / l.exp();
                    lp += -0.5 * z * z - l - HALF_LN_2PI;
                }
                lp
            })
            .collect()
    }

    pub fn log_prob_grad(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_dim("log_prob_grad state", self.state_dim(), s.len())?;
        check_dim("log_prob_grad action", self.action_dim(), a.len())?;
        let states = ArrayView2::from_shape((1, s.len()), s).unwrap();
        let actions = ArrayView2::from_shape((1, a.len()), a).unwrap();
        Ok(self.score_gradient(states, actions, &[1.0]))
    }

    /// `Σ_i w_i ∇_θ log π(a_i | s_i)`.
    pub fn score_gradient(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>, weights: &[f64]) -> Vec<f64> {
        assert_eq!(states.nrows(), weights.len());
        assert_eq!(actions.nrows(), weights.len());
        let cache = self.mean_net.forward_cached(states);
        let means = cache.output();
        let var: Vec<f64> = self.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        let mut upstream = Array2::<f64>::zeros(means.raw_dim());
        let mut g_log_std = vec![0.0; self.action_dim()];
        for (i, w) in weights.iter().enumerate() {
            for j in 0..self.action_dim() {
                let diff = actions[[i, j]] - means[[i, j]];
                upstream[[i, j]] = w * diff / var[j];
                g_log_std[j] += w * (diff * diff / var[j] - 1.0);
            }
        }
        let (mut grads, _) = self.mean_net.backward(&cache, upstream.view());
        grads.extend(g_log_std);
        grads
    }

    /// Fisher-information (mean-KL Hessian) times `v`, averaged over `states`.
    pub fn fisher_vector_product(&self, states: ArrayView2<'_, f64>, v: &[f64]) -> Vec<f64> {
        let cache = self.mean_net.forward_cached(states);
        self.fisher_vector_product_cached(&cache, v)
    }

    pub fn fisher_vector_product_cached(&self, cache: &crate::numerics::ForwardCache, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.num_params());
        let n_net = self.mean_net.num_params();
        let batch = cache.input().nrows() as f64;
        let mut jv = self.mean_net.jvp(cache, &v[..n_net]);
        for mut row in jv.rows_mut() {
            for (x, l) in row.iter_mut().zip(&self.log_std) {
                *x /= (2.0 * l).exp() * batch;
            }
        }
        let (mut out, _) = self.mean_net.backward(cache, jv.view());
        out.extend(v[n_net..].iter().map(|x| 2.0 * x));
        out
    }

    /// Mean over states of `KL(old(·|s) ‖ new(·|s))`.
    pub fn kl_mean(old: &GaussianPolicy, new: &GaussianPolicy, states: ArrayView2<'_, f64>) -> f64 {
        let mo = old.mean_batch(states);
        let mn = new.mean_batch(states);
        kl_from_means(mo.view(), &old.log_std, mn.view(), &new.log_std)
    }

    /// Gradient of `kl_mean(old, new, states)` with respect to `new`'s
    /// parameters.
    pub fn kl_mean_grad(old: &GaussianPolicy, new: &GaussianPolicy, states: ArrayView2<'_, f64>) -> Vec<f64> {
        let mo = old.mean_batch(states);
        let cache = new.mean_net.forward_cached(states);
        let mn = cache.output();
        let batch = states.nrows() as f64;
        let var_new: Vec<f64> = new.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        let var_old: Vec<f64> = old.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        let mut upstream = Array2::<f64>::zeros(mn.raw_dim());
        let mut g_log_std = vec![0.0; new.action_dim()];
        for i in 0..states.nrows() {
            for j in 0..new.action_dim() {
                let d = mn[[i, j]] - mo[[i, j]];
                upstream[[i, j]] = d / var_new[j] / batch;
                g_log_std[j] += (1.0 - (var_old[j] + d * d) / var_new[j]) / batch;
            }
        }
        let (mut grads, _) = new.mean_net.backward(&cache, upstream.view());
        grads.extend(g_log_std);
        grads
    }
}

pub fn diag_gaussian_log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, l), x)| {
            let z = (x - m) / l.exp();
            -0.5 * z * z - l - HALF_LN_2PI
        })
        .sum()
}

/// Closed-form mean KL between diagonal Gaussians, given per-state means.
pub fn kl_from_means(
    mean_old: ArrayView2<'_, f64>,
    log_std_old: &[f64],
    mean_new: ArrayView2<'_, f64>,
    log_std_new: &[f64],
) -> f64 {
    let n = mean_old.nrows();
    let mut total = 0.0;
    for (ro, rn) in mean_old.rows().into_iter().zip(mean_new.rows()) {
        for j in 0..log_std_old.len() {
            let (lo, ln) = (log_std_old[j], log_std_new[j]);
            let d = ro[j] - rn[j];
            total += ln - lo + ((2.0 * lo).exp() + d * d) / (2.0 * (2.0 * ln).exp()) - 0.5;
        }
    }
    total / n as f64
}

#[cfg(test)]
mod tests;
