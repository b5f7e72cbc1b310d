use std::path::{Path, PathBuf};

use rand::Rng;

use super::config::{Algorithm, RunConfig};
use super::record::{CheckRecord, IterationRecord, RunWriter, UpdateRecord};
use super::{final_return, CODE_HASH};
use crate::dynamics::{train_ensemble, Dataset, ModelEnsemble};
use crate::env::{evaluate_from_states, EnvSpec};
use crate::error::{Error, Result};
use crate::numerics::rng::{seeded, substream};
use crate::numerics::AdamState;
use crate::optim::{bptt_update, trpo_update, vpg_update, OptimizerConfig, OptimizerKind, UpdateStats};
use crate::policy::GaussianPolicy;
use crate::rollout::{
    collect_real_samples, estimate_member_returns, rollout_real, sample_start_states, simulate_fictitious,
    split_dataset,
};
use crate::validation::{Evaluation, ValidationController, ValidationMode};

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// The config after algorithm-specific pinning.
    pub config: RunConfig,
    pub records: Vec<IterationRecord>,
    pub updates: Vec<UpdateRecord>,
    pub checks: Vec<CheckRecord>,
    pub policy: GaussianPolicy,
    pub ensemble: Option<ModelEnsemble>,
}

struct Recorder {
    records: Vec<IterationRecord>,
    updates: Vec<UpdateRecord>,
    checks: Vec<CheckRecord>,
    writer: Option<RunWriter>,
}

impl Recorder {
    fn update(&mut self, iteration: usize, update: usize, stats: UpdateStats) -> Result<()> {
        let r = UpdateRecord {
            iteration,
            update,
            stats,
        };
        if let Some(w) = &mut self.writer {
            w.update(&r)?;
        }
        self.updates.push(r);
        Ok(())
    }

    fn check(&mut self, c: CheckRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.check(&c)?;
        }
        self.checks.push(c);
        Ok(())
    }

    fn iteration(&mut self, r: IterationRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.iteration(&r)?;
        }
        log::info!(
            "iteration {}: real steps {}, real return {:.3} ± {:.3}, {} inner updates",
            r.iteration,
            r.real_steps,
            r.real_return_mean,
            r.real_return_stderr,
            r.inner_updates
        );
        self.records.push(r);
        Ok(())
    }

    fn checkpoint_dir(&self, name: &str) -> Option<PathBuf> {
        self.writer.as_ref().map(|w| w.dir().join("checkpoints").join(name))
    }
}

/// Runs the configured algorithm. With `out`, streams `run.csv`,
/// `updates.csv`, `validation.csv`, `run.log`, `summary.json` and
/// `checkpoints/` into that directory.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let env = cfg.build_env()?;
    let writer = out.map(|d| RunWriter::create(d, &cfg)).transpose()?;
    let mut rec = Recorder {
        records: Vec::new(),
        updates: Vec::new(),
        checks: Vec::new(),
        writer,
    };
    let mut policy = GaussianPolicy::new(
        env.state_dim(),
        env.action_dim(),
        &cfg.policy_hidden,
        &mut substream(cfg.seed, "policy-init", 0),
    )?;
    let result = match cfg.algorithm {
        Algorithm::ModelFreeTrpo => model_free_loop(&cfg, &env, &mut policy, &mut rec).map(|()| None),
        Algorithm::Metrpo | Algorithm::VanillaBptt => model_based_loop(&cfg, &env, &mut policy, &mut rec),
    };
    if let Some(w) = &mut rec.writer {
        if let Err(e) = &result {
            w.note(&format!("aborted: {e}"))?;
        }
        write_summary(w.dir(), &cfg, &rec.records, result.as_ref().err())?;
    }
    let ensemble = result?;
    if let Some(dir) = rec.checkpoint_dir("final") {
        save_checkpoint(&dir, &cfg, &policy, ensemble.as_ref())?;
    }
    Ok(RunOutput {
        config: cfg,
        records: rec.records,
        updates: rec.updates,
        checks: rec.checks,
        policy,
        ensemble,
    })
}

/// Ensemble-based training; `vanilla_bptt` is the same loop after
/// [`RunConfig::effective`] pins one model and BPTT.
pub fn run_metrpo(cfg: &RunConfig) -> Result<Vec<IterationRecord>> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::Metrpo;
    Ok(run(&cfg, None)?.records)
}

pub fn run_vanilla(cfg: &RunConfig) -> Result<Vec<IterationRecord>> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::VanillaBptt;
    Ok(run(&cfg, None)?.records)
}

fn save_checkpoint(dir: &Path, cfg: &RunConfig, policy: &GaussianPolicy, ensemble: Option<&ModelEnsemble>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    policy.save(dir, "policy")?;
    if let Some(e) = ensemble {
        e.save(dir)?;
    }
    Ok(())
}

fn write_summary(dir: &Path, cfg: &RunConfig, records: &[IterationRecord], error: Option<&Error>) -> Result<()> {
    let config: serde_json::Map<String, serde_json::Value> =
        cfg.to_pairs().into_iter().map(|(k, v)| (k, serde_json::Value::String(v))).collect();
    let best = records.iter().map(|r| r.real_return_mean).fold(None, |b: Option<f64>, x| Some(b.map_or(x, |b| b.max(x))));
    let summary = serde_json::json!({
        "code_hash": CODE_HASH,
        "status": error.map_or("ok".to_string(), |e| format!("error: {e}")),
        "iterations": records.len(),
        "real_steps": records.last().map_or(0, |r| r.real_steps),
        "final_return": final_return(records),
        "last_return": records.last().map(|r| r.real_return_mean),
        "best_return": best,
        "config": config,
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Start states for fictitious rollouts and validation, taken from the
/// real data instead of fresh draws from the initial distribution.
fn start_pools(dataset: &Dataset, visited: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    if visited {
        let states = |d: &[crate::env::Transition]| d.iter().map(|t| t.s.clone()).collect();
        (states(&dataset.train), states(&dataset.validation))
    } else {
        (dataset.train_initial_states().to_vec(), dataset.validation_initial_states().to_vec())
    }
}

fn model_based_loop(
    cfg: &RunConfig,
    env: &EnvSpec,
    policy: &mut GaussianPolicy,
    rec: &mut Recorder,
) -> Result<Option<ModelEnsemble>> {
    let seed = cfg.seed;
    let horizon = env.horizon();
    let eval_states = env.sample_initial_states(cfg.eval_episodes, &mut substream(seed, "eval-states", 0));
    let learning_rate = match cfg.optimizer.kind {
        OptimizerKind::Bptt => cfg.optimizer.bptt_learning_rate,
        _ => cfg.optimizer.vpg_learning_rate,
    };
    let mut adam = AdamState::new(policy.num_params(), learning_rate);
    let mut dataset = Dataset::default();
    let mut ensemble: Option<ModelEnsemble> = None;
    let mut previous_params: Option<Vec<f64>> = None;
    let mut real_steps = 0;

    for it in 0..cfg.outer_iterations {
        let idx = it as u64;
        let episodes = collect_real_samples(
            env,
            policy,
            previous_params.as_deref(),
            &cfg.exploration,
            &mut substream(seed, "collect", idx),
        )?;
        real_steps += episodes.iter().map(Vec::len).sum::<usize>();
        split_dataset(&mut dataset, episodes, &mut substream(seed, "split", idx))?;

        let reports = match ensemble.as_mut() {
            Some(e) if cfg.model_warm_start => e.train(&dataset, &cfg.model)?,
            _ => {
                let base_seed: u64 = substream(seed, "models", idx).random::<u64>() >> 1;
                let (e, reports) = train_ensemble(cfg.models, &dataset, &cfg.model, base_seed)?;
                ensemble = Some(e);
                reports
            }
        };
        let model_losses: Vec<f64> = reports.iter().map(|r| r.best_loss).collect();
        let members = ensemble.as_ref().expect("ensemble trained above").members();
        previous_params = Some(policy.params());

        let (train_pool, validation_pool) = start_pools(&dataset, cfg.visited_starts);
        let mut vrng = substream(seed, "validation", idx);
        let val_starts = sample_start_states(&validation_pool, cfg.validation_starts, &mut vrng)?;
        let val_seed: u64 = vrng.random();
        let batch_starts = sample_start_states(&train_pool, cfg.optimizer.trajectories(horizon), &mut vrng)?;
        let batch_seed: u64 = vrng.random();
        let real_seed: u64 = vrng.random();
        let mode = cfg.validation.mode;

        let evaluate = |policy: &GaussianPolicy| -> Result<Evaluation> {
            let per_model = estimate_member_returns(
                env,
                members,
                policy,
                &val_starts,
                horizon,
                cfg.validation_deterministic,
                val_seed,
            )?;
            let batch_mean = if mode == ValidationMode::TrpoMean {
                let b = simulate_fictitious(
                    env,
                    members,
                    policy,
                    &batch_starts,
                    horizon,
                    cfg.sampling_mode,
                    false,
                    &mut seeded(batch_seed),
                )?;
                Some(b.mean_return())
            } else {
                None
            };
            let real = if mode == ValidationMode::Real || cfg.real_at_checks {
                Some(evaluate_from_states(env, policy, &eval_states, &mut seeded(real_seed), cfg.eval_deterministic)?.mean)
            } else {
                None
            };
            Ok(Evaluation {
                per_model,
                batch_mean,
                real,
            })
        };

        let baseline = evaluate(policy)?;
        rec.check(CheckRecord::new(it, None, &baseline))?;
        let mut controller = ValidationController::new(cfg.validation.clone(), baseline.clone())?;
        let mut latest = (0, baseline);
        let mut inner_rng = substream(seed, "inner", idx);
        let n_traj = cfg.optimizer.trajectories(horizon);
        let mut updates = 0;
        loop {
            let starts = sample_start_states(&train_pool, n_traj, &mut inner_rng)?;
            let stats = match cfg.optimizer.kind {
                OptimizerKind::Bptt => bptt_update(
                    env,
                    members,
                    policy,
                    &mut adam,
                    &starts,
                    horizon,
                    cfg.sampling_mode,
                    &cfg.optimizer,
                    &mut inner_rng,
                )?,
                kind => {
                    let batch =
                        simulate_fictitious(env, members, policy, &starts, horizon, cfg.sampling_mode, false, &mut inner_rng)?;
                    if kind == OptimizerKind::Trpo {
                        trpo_update(policy, &batch, &cfg.optimizer)?
                    } else {
                        vpg_update(policy, &mut adam, &batch, &cfg.optimizer)?
                    }
                }
            };
            updates += 1;
            rec.update(it, updates, stats)?;
            let eval = if controller.next_is_check() {
                Some(evaluate(policy)?)
            } else {
                None
            };
            let verdict = controller.check_and_update(eval.as_ref())?;
            if let Some(e) = eval {
                rec.check(CheckRecord::new(it, Some(&verdict), &e))?;
                latest = (updates, e);
            }
            if !verdict.continue_flag || updates >= cfg.max_inner_updates {
                break;
            }
        }
        let eta = if latest.0 == updates {
            latest.1.per_model
        } else {
            evaluate(policy)?.per_model
        };

        let est = evaluate_from_states(env, policy, &eval_states, &mut substream(seed, "eval", idx), cfg.eval_deterministic)?;
        rec.iteration(IterationRecord {
            iteration: it,
            real_steps,
            real_return_mean: est.mean,
            real_return_stderr: est.stderr,
            eta,
            model_losses,
            inner_updates: updates,
        })?;
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = rec.checkpoint_dir(&format!("iter_{it}")) {
                save_checkpoint(&dir, cfg, policy, ensemble.as_ref())?;
            }
        }
        if cfg.target_return.is_some_and(|t| est.mean >= t) {
            break;
        }
    }
    Ok(ensemble)
}

/// TRPO on on-policy batches from the real system. Each outer iteration
/// collects `timesteps_per_iteration` real steps and takes one step with
/// trust region `model_free_max_kl`.
fn model_free_loop(cfg: &RunConfig, env: &EnvSpec, policy: &mut GaussianPolicy, rec: &mut Recorder) -> Result<()> {
    let seed = cfg.seed;
    let eval_states = env.sample_initial_states(cfg.eval_episodes, &mut substream(seed, "eval-states", 0));
    let episodes = cfg.exploration.timesteps_per_iteration / env.horizon();
    let opt = OptimizerConfig {
        kind: OptimizerKind::Trpo,
        max_kl: cfg.model_free_max_kl,
        ..cfg.optimizer.clone()
    };
    let mut real_steps = 0;
    for it in 0..cfg.outer_iterations {
        let idx = it as u64;
        let batch = rollout_real(env, policy, episodes, &mut substream(seed, "collect", idx))?;
        real_steps += batch.total_steps();
        let stats = trpo_update(policy, &batch, &opt)?;
        rec.update(it, 1, stats)?;
        let est = evaluate_from_states(env, policy, &eval_states, &mut substream(seed, "eval", idx), cfg.eval_deterministic)?;
        rec.iteration(IterationRecord {
            iteration: it,
            real_steps,
            real_return_mean: est.mean,
            real_return_stderr: est.stderr,
            eta: Vec::new(),
            model_losses: Vec::new(),
            inner_updates: 1,
        })?;
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = rec.checkpoint_dir(&format!("iter_{it}")) {
                save_checkpoint(&dir, cfg, policy, None)?;
            }
        }
        if cfg.target_return.is_some_and(|t| est.mean >= t) {
            break;
        }
    }
    Ok(())
}

/// Real return of a saved policy on `episodes` fresh initial states.
pub fn evaluate_checkpoint(dir: &Path, episodes: usize, seed: u64) -> Result<crate::env::ReturnEstimate> {
    let cfg = RunConfig::load(&dir.join("config.txt"))?;
    let env = cfg.build_env()?;
    let policy = GaussianPolicy::load(dir, "policy")?;
    let starts = env.sample_initial_states(episodes, &mut substream(seed, "checkpoint-eval", 0));
    if starts.is_empty() {
        return Err(Error::InvalidConfig("episodes must be at least 1".into()));
    }
    evaluate_from_states(&env, &policy, &starts, &mut substream(seed, "checkpoint-eval", 1), cfg.eval_deterministic)
}
