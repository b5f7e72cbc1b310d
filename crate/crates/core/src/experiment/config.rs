use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelTrainConfig;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::rollout::{ExplorationConfig, SamplingMode};
use crate::validation::{ValidationConfig, ValidationMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Ensemble of models, fictitious TRPO updates, ensemble validation.
    Metrpo,
    /// Single model, BPTT updates, single-model validation.
    VanillaBptt,
    /// TRPO on real on-policy batches, no model.
    ModelFreeTrpo,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Metrpo => "metrpo",
            Algorithm::VanillaBptt => "vanilla_bptt",
            Algorithm::ModelFreeTrpo => "model_free_trpo",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "metrpo" => Algorithm::Metrpo,
            "vanilla_bptt" | "vanilla" => Algorithm::VanillaBptt,
            "model_free_trpo" => Algorithm::ModelFreeTrpo,
            other => return Err(Error::InvalidConfig(format!("unknown algorithm `{other}`"))),
        })
    }
}

/// Everything a run depends on. Serialized as flat `key = value` lines; see
/// [`RunConfig::set`] for the keys.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: String,
    /// `env.<constant>` overrides applied in order.
    pub env_overrides: Vec<(String, f64)>,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub models: usize,
    pub sampling_mode: SamplingMode,
    pub validation: ValidationConfig,
    pub optimizer: OptimizerConfig,
    pub exploration: ExplorationConfig,
    pub model: ModelTrainConfig,
    /// Keep training the same ensemble across outer iterations instead of
    /// reinitializing it.
    pub model_warm_start: bool,
    /// Draw fictitious start states from every visited real state rather
    /// than from the first states of real episodes.
    pub visited_starts: bool,
    pub policy_hidden: Vec<usize>,
    pub outer_iterations: usize,
    /// Stop once an iteration's real return reaches this value.
    pub target_return: Option<f64>,
    pub max_inner_updates: usize,
    /// Start states for each `η̂` estimate, drawn from validation-split states.
    pub validation_starts: usize,
    pub validation_deterministic: bool,
    pub eval_episodes: usize,
    /// Evaluate the real return with the policy mean.
    pub eval_deterministic: bool,
    /// Also measure the real return at every inner check (diagnostic only;
    /// these episodes are not counted as collected samples).
    pub real_at_checks: bool,
    pub model_free_max_kl: f64,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            env_overrides: Vec::new(),
            algorithm: Algorithm::Metrpo,
            seed: 0,
            models: 5,
            sampling_mode: SamplingMode::StepRand,
            validation: ValidationConfig::default(),
            optimizer: OptimizerConfig::default(),
            exploration: ExplorationConfig::default(),
            model: ModelTrainConfig::default(),
            model_warm_start: true,
            visited_starts: false,
            policy_hidden: vec![32, 32],
            outer_iterations: 10,
            target_return: None,
            max_inner_updates: 200,
            validation_starts: 50,
            validation_deterministic: false,
            eval_episodes: 10,
            eval_deterministic: true,
            real_at_checks: true,
            model_free_max_kl: 0.05,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn parse_sizes(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join_sizes(sizes: &[usize]) -> String {
    sizes.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some(constant) = key.strip_prefix("env.") {
            let v: f64 = parse(key, value)?;
            self.env_overrides.retain(|(k, _)| k != constant);
            self.env_overrides.push((constant.to_string(), v));
            return Ok(());
        }
        match key {
            "env" => self.env = value.to_string(),
            "algorithm" => self.algorithm = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "models" => self.models = parse(key, value)?,
            "sampling_mode" => self.sampling_mode = value.parse()?,
            "validation_mode" => self.validation.mode = value.parse()?,
            "validation_threshold" => self.validation.threshold = parse(key, value)?,
            "validation_check_every" => self.validation.check_every = parse(key, value)?,
            "validation_patience" => self.validation.patience = parse(key, value)?,
            "optimizer" => self.optimizer.kind = value.parse()?,
            "max_kl" => self.optimizer.max_kl = parse(key, value)?,
            "batch_timesteps" => self.optimizer.batch_timesteps = parse(key, value)?,
            "bptt_learning_rate" => self.optimizer.bptt_learning_rate = parse(key, value)?,
            "vpg_learning_rate" => self.optimizer.vpg_learning_rate = parse(key, value)?,
            "clip_norm" => self.optimizer.clip_norm = parse(key, value)?,
            "gamma" => self.optimizer.gamma = parse(key, value)?,
            "cg_iters" => self.optimizer.cg_iters = parse(key, value)?,
            "cg_damping" => self.optimizer.cg_damping = parse(key, value)?,
            "fvp_stride" => self.optimizer.fvp_stride = parse(key, value)?,
            "backtrack_ratio" => self.optimizer.backtrack_ratio = parse(key, value)?,
            "max_backtracks" => self.optimizer.max_backtracks = parse(key, value)?,
            "bptt_deterministic" => self.optimizer.bptt_deterministic = parse_bool(key, value)?,
            "explore_std_min" => self.exploration.std_range.0 = parse(key, value)?,
            "explore_std_max" => self.exploration.std_range.1 = parse(key, value)?,
            "param_noise_scale" => self.exploration.param_noise_scale = parse(key, value)?,
            "timesteps_per_iteration" => self.exploration.timesteps_per_iteration = parse(key, value)?,
            "model_hidden" => self.model.hidden = parse_sizes(key, value)?,
            "model_learning_rate" => self.model.learning_rate = parse(key, value)?,
            "model_batch_size" => self.model.batch_size = parse(key, value)?,
            "model_check_every" => self.model.check_every = parse(key, value)?,
            "model_patience" => self.model.patience = parse(key, value)?,
            "model_max_passes" => self.model.max_passes = parse(key, value)?,
            "model_warm_start" => self.model_warm_start = parse_bool(key, value)?,
            "visited_starts" => self.visited_starts = parse_bool(key, value)?,
            "policy_hidden" => self.policy_hidden = parse_sizes(key, value)?,
            "outer_iterations" => self.outer_iterations = parse(key, value)?,
            "target_return" => {
                self.target_return = if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "max_inner_updates" => self.max_inner_updates = parse(key, value)?,
            "validation_starts" => self.validation_starts = parse(key, value)?,
            "validation_deterministic" => self.validation_deterministic = parse_bool(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "eval_deterministic" => self.eval_deterministic = parse_bool(key, value)?,
            "real_at_checks" => self.real_at_checks = parse_bool(key, value)?,
            "model_free_max_kl" => self.model_free_max_kl = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Every entry in a fixed order; [`RunConfig::from_pairs`] inverts it.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let o = &self.optimizer;
        let mut pairs: Vec<(&str, String)> = vec![
            ("env", self.env.clone()),
            ("algorithm", self.algorithm.to_string()),
            ("seed", self.seed.to_string()),
            ("models", self.models.to_string()),
            ("sampling_mode", self.sampling_mode.to_string()),
            ("validation_mode", self.validation.mode.to_string()),
            ("validation_threshold", self.validation.threshold.to_string()),
            ("validation_check_every", self.validation.check_every.to_string()),
            ("validation_patience", self.validation.patience.to_string()),
            ("optimizer", o.kind.to_string()),
            ("max_kl", o.max_kl.to_string()),
            ("batch_timesteps", o.batch_timesteps.to_string()),
            ("bptt_learning_rate", o.bptt_learning_rate.to_string()),
            ("vpg_learning_rate", o.vpg_learning_rate.to_string()),
            ("clip_norm", o.clip_norm.to_string()),
            ("gamma", o.gamma.to_string()),
            ("cg_iters", o.cg_iters.to_string()),
            ("cg_damping", o.cg_damping.to_string()),
            ("fvp_stride", o.fvp_stride.to_string()),
            ("backtrack_ratio", o.backtrack_ratio.to_string()),
            ("max_backtracks", o.max_backtracks.to_string()),
            ("bptt_deterministic", o.bptt_deterministic.to_string()),
            ("explore_std_min", self.exploration.std_range.0.to_string()),
            ("explore_std_max", self.exploration.std_range.1.to_string()),
            ("param_noise_scale", self.exploration.param_noise_scale.to_string()),
            ("timesteps_per_iteration", self.exploration.timesteps_per_iteration.to_string()),
            ("model_hidden", join_sizes(&self.model.hidden)),
            ("model_learning_rate", self.model.learning_rate.to_string()),
            ("model_batch_size", self.model.batch_size.to_string()),
            ("model_check_every", self.model.check_every.to_string()),
            ("model_patience", self.model.patience.to_string()),
            ("model_max_passes", self.model.max_passes.to_string()),
            ("model_warm_start", self.model_warm_start.to_string()),
            ("visited_starts", self.visited_starts.to_string()),
            ("policy_hidden", join_sizes(&self.policy_hidden)),
            ("outer_iterations", self.outer_iterations.to_string()),
            ("target_return", self.target_return.map_or("none".into(), |t| t.to_string())),
            ("max_inner_updates", self.max_inner_updates.to_string()),
            ("validation_starts", self.validation_starts.to_string()),
            ("validation_deterministic", self.validation_deterministic.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("eval_deterministic", self.eval_deterministic.to_string()),
            ("real_at_checks", self.real_at_checks.to_string()),
            ("model_free_max_kl", self.model_free_max_kl.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        let overrides: Vec<(String, String)> =
            self.env_overrides.iter().map(|(k, v)| (format!("env.{k}"), v.to_string())).collect();
        let mut out: Vec<(String, String)> = pairs.drain(..1).map(|(k, v)| (k.to_string(), v)).collect();
        out.extend(overrides);
        out.extend(pairs.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The config actually run: `vanilla_bptt` pins a single model, the
    /// `one_model` modes and BPTT.
    pub fn effective(&self) -> Self {
        let mut cfg = self.clone();
        if cfg.algorithm == Algorithm::VanillaBptt {
            if cfg.models != 1 {
                log::warn!("vanilla_bptt uses a single model; ignoring models = {}", cfg.models);
            }
            cfg.models = 1;
            cfg.sampling_mode = SamplingMode::OneModel(0);
            cfg.validation.mode = ValidationMode::OneModel;
            cfg.optimizer.kind = OptimizerKind::Bptt;
        }
        cfg
    }

    pub fn build_env(&self) -> Result<EnvSpec> {
        let mut env = EnvSpec::from_id(&self.env)?;
        for (k, v) in &self.env_overrides {
            env.set_constant(k, *v)?;
        }
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.build_env()?;
        let horizon = env.horizon();
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        self.exploration.validate()?;
        let tpi = self.exploration.timesteps_per_iteration;
        if tpi == 0 || tpi % horizon != 0 {
            return invalid(format!("timesteps_per_iteration {tpi} must be a positive multiple of the horizon {horizon}"));
        }
        if self.eval_episodes == 0 {
            return invalid("eval_episodes must be positive".into());
        }
        if self.policy_hidden.contains(&0) || self.model.hidden.contains(&0) {
            return invalid("hidden layer sizes must be positive".into());
        }
        match self.algorithm {
            Algorithm::ModelFreeTrpo => {
                if !(self.model_free_max_kl > 0.0) {
                    return invalid("model_free_max_kl must be positive".into());
                }
            }
            _ => {
                self.optimizer.validate(horizon)?;
                self.validation.validate()?;
                if self.models == 0 {
                    return invalid("models must be at least 1".into());
                }
                if let SamplingMode::OneModel(k) = self.sampling_mode {
                    if k >= self.models {
                        return invalid(format!("one_model index {k} out of range for {} models", self.models));
                    }
                }
                if self.optimizer.kind == OptimizerKind::Bptt && !self.sampling_mode.selects_member() {
                    return invalid(format!("bptt cannot differentiate through sampling mode {}", self.sampling_mode));
                }
                if tpi / horizon < 3 {
                    return invalid("each outer iteration must collect at least 3 episodes".into());
                }
                if self.validation_starts == 0 || self.max_inner_updates == 0 {
                    return invalid("validation_starts and max_inner_updates must be positive".into());
                }
                if self.model.batch_size == 0 || self.model.check_every == 0 || self.model.max_passes == 0 {
                    return invalid("model batch_size, check_every and max_passes must be positive".into());
                }
            }
        }
        Ok(())
    }
}
