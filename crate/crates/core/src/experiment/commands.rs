//! File-producing entry points behind the CLI subcommands that do not
//! already write their own artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use super::bias::{run_bias_demo, write_bias_curve_csv, BiasDemoConfig, BiasDemoReport};
use super::engine::{evaluate_checkpoint, run};
use super::record::{fmt_f64, read_log_header};
use crate::env::ReturnEstimate;
use crate::error::Result;

/// Evaluates a checkpoint and writes the estimate to `<out>/run.csv`.
pub fn eval_checkpoint_to(checkpoint: &Path, episodes: usize, seed: u64, out: &Path) -> Result<ReturnEstimate> {
    let est = evaluate_checkpoint(checkpoint, episodes, seed)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("run.csv"))?;
    w.write_record(["episodes", "seed", "real_return_mean", "real_return_stderr"])?;
    w.write_record([episodes.to_string(), seed.to_string(), fmt_f64(est.mean), fmt_f64(est.stderr)])?;
    w.flush()?;
    Ok(est)
}

/// Runs the bias demo for `seeds` consecutive seeds starting at `first_seed`.
/// Writes one `run.csv` row per seed and a `curve_seed<s>.csv` each.
pub fn demo_bias_to(first_seed: u64, seeds: u64, dense: bool, out: &Path) -> Result<Vec<(u64, BiasDemoReport)>> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("run.csv"))?;
    w.write_record(["seed", "argmin", "in_global_basin", "nearer_local", "fit_rmse"])?;
    let mut reports = Vec::new();
    for s in first_seed..first_seed + seeds.max(1) {
        let cfg = if dense { BiasDemoConfig::dense(s) } else { BiasDemoConfig::local(s) };
        let report = run_bias_demo(&cfg)?;
        write_bias_curve_csv(&out.join(format!("curve_seed{s}.csv")), &report)?;
        w.write_record([
            s.to_string(),
            fmt_f64(report.argmin),
            report.in_global_basin.to_string(),
            report.nearer_local.to_string(),
            fmt_f64(report.fit_rmse),
        ])?;
        reports.push((s, report));
    }
    w.flush()?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub out: PathBuf,
    pub recorded_hash: Option<String>,
    /// The replayed `run.csv` is byte-identical to the original.
    pub matches: bool,
}

/// Re-runs the config recorded in a `run.log` into `out` (default
/// `replay/` beside the log) and compares the two `run.csv` files.
pub fn replay_log(log: &Path, out: Option<&Path>) -> Result<ReplayOutcome> {
    let text = fs::read_to_string(log)?;
    let (cfg, recorded_hash) = read_log_header(&text)?;
    let original_dir = log.parent().unwrap_or(Path::new("."));
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| original_dir.join("replay"));
    run(&cfg, Some(&out))?;
    let original = fs::read(original_dir.join("run.csv"))?;
    let replayed = fs::read(out.join("run.csv"))?;
    Ok(ReplayOutcome {
        out,
        recorded_hash,
        matches: original == replayed,
    })
}
