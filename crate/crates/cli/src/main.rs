use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use metrpo::experiment::{
    demo_bias_to, eval_checkpoint_to, evaluate_checkpoint, replay_log, run, run_ablation, AblationAxis, RunConfig,
    CODE_HASH,
};

#[derive(Parser)]
#[command(name = "metrpo", version, about = "Model-ensemble trust-region policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with the configured algorithm.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for run.csv, updates.csv, validation.csv, run.log,
        /// summary.json and checkpoints/.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Sweep one config axis over several seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// optimizer, k, sampling_mode or validation_mode.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
    },
    /// Real return of a saved policy.
    Eval {
        /// A checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the estimate to `<out>/run.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a network to samples of a double-well function and report where
    /// its minimum lands.
    DemoBias {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Sample the whole domain on an even grid instead of near x0.
        #[arg(long)]
        dense: bool,
        #[arg(long, default_value = "runs/demo-bias")]
        out: PathBuf,
    },
    /// Re-run the config recorded in a run log and compare run.csv.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Defaults to `replay/` next to the log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    env: Option<String>,
    /// Ensemble size K.
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    sampling_mode: Option<String>,
    #[arg(long)]
    validation_mode: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    /// Any other config entry, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        for entry in &self.set {
            let (k, v) = entry.split_once('=').with_context(|| format!("`--set {entry}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v)?;
        }
        let flags = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("env", self.env.clone()),
            ("models", self.models.map(|k| k.to_string())),
            ("sampling_mode", self.sampling_mode.clone()),
            ("validation_mode", self.validation_mode.clone()),
            ("algorithm", self.algorithm.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let output = run(cfg, Some(out))?;
    let last = output.records.last();
    println!(
        "{} iterations, {} real steps, final real return {}",
        output.records.len(),
        last.map_or(0, |r| r.real_steps),
        last.map_or("-".into(), |r| format!("{:.4}", r.real_return_mean)),
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn ablate(cfg: &RunConfig, axis: &str, values: &[String], seeds: &[u64], out: &Path) -> Result<()> {
    let axis: AblationAxis = axis.parse()?;
    let table = run_ablation(cfg, axis, values, seeds, Some(out))?;
    println!("{:<16} {:>14} {:>10} {:>6}", axis.to_string(), "final_return", "stderr", "runs");
    for (value, mean, stderr, n) in table.summary() {
        let show = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!("{value:<16} {:>14} {:>10} {n:>6}", show(mean), show(stderr));
    }
    let failed = table.cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see {}", out.join("summary.csv").display());
    }
    Ok(())
}

fn eval(checkpoint: &Path, episodes: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let est = match out {
        Some(dir) => eval_checkpoint_to(checkpoint, episodes, seed, dir)?,
        None => evaluate_checkpoint(checkpoint, episodes, seed)?,
    };
    println!("real return {:.4} ± {:.4} over {episodes} episodes", est.mean, est.stderr);
    Ok(())
}

fn demo_bias(seed: u64, seeds: u64, dense: bool, out: &Path) -> Result<()> {
    let reports = demo_bias_to(seed, seeds, dense, out)?;
    for (s, r) in &reports {
        let basin = if r.in_global_basin { "global basin" } else { "local basin" };
        println!("seed {s}: argmin {:.3} ({basin})", r.argmin);
    }
    let global = reports.iter().filter(|(_, r)| r.in_global_basin).count();
    let local = reports.iter().filter(|(_, r)| r.nearer_local).count();
    println!("{global} in the global basin, {local} nearer the local minimum");
    println!("wrote {}", out.display());
    Ok(())
}

fn replay(log: &Path, out: Option<&Path>) -> Result<()> {
    let outcome = replay_log(log, out).with_context(|| format!("replaying {}", log.display()))?;
    if outcome.recorded_hash.as_deref() != Some(CODE_HASH) {
        log::warn!("run was recorded with code hash {:?}, this build is {CODE_HASH}", outcome.recorded_hash);
    }
    if !outcome.matches {
        bail!("replayed run.csv in {} differs from the original", outcome.out.display());
    }
    println!("replay matches: {}", outcome.out.join("run.csv").display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, out } => train(&config.build()?, &out),
        Command::Ablate {
            config,
            axis,
            values,
            seeds,
            out,
        } => ablate(&config.build()?, &axis, &values, &seeds, &out),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            out,
        } => eval(&checkpoint, episodes, seed, out.as_deref()),
        Command::DemoBias { seed, seeds, dense, out } => demo_bias(seed, seeds, dense, &out),
        Command::Replay { log, out } => replay(&log, out.as_deref()),
    }
}
