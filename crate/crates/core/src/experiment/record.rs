use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::CODE_HASH;
use crate::error::Result;
use crate::optim::UpdateStats;
use crate::validation::{Evaluation, ValidationVerdict};

/// One outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Real transitions collected so far, this iteration included.
    pub real_steps: usize,
    pub real_return_mean: f64,
    pub real_return_stderr: f64,
    /// `η̂` of the final policy under each member; empty without models.
    pub eta: Vec<f64>,
    /// Best normalized validation loss of each member.
    pub model_losses: Vec<f64>,
    pub inner_updates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateRecord {
    pub iteration: usize,
    pub update: usize,
    pub stats: UpdateStats,
}

/// Evaluation at the start of an inner phase (`update == 0`) or at a check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub iteration: usize,
    pub update: usize,
    pub ratio: Option<f64>,
    pub passed: Option<bool>,
    pub continue_flag: bool,
    pub eta: Vec<f64>,
    pub batch_mean: Option<f64>,
    pub real: Option<f64>,
}

impl CheckRecord {
    pub fn new(iteration: usize, verdict: Option<&ValidationVerdict>, eval: &Evaluation) -> Self {
        Self {
            iteration,
            update: verdict.map_or(0, |v| v.update),
            ratio: verdict.and_then(|v| v.ratio),
            passed: verdict.and_then(|v| v.passed),
            continue_flag: verdict.is_none_or(|v| v.continue_flag),
            eta: eval.per_model.clone(),
            batch_mean: eval.batch_mean,
            real: eval.real,
        }
    }

    pub fn eta_mean(&self) -> Option<f64> {
        mean(&self.eta)
    }
}

pub(crate) fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

pub const RUN_COLUMNS: [&str; 9] = [
    "iteration",
    "real_steps",
    "real_return_mean",
    "real_return_stderr",
    "inner_updates",
    "eta_mean",
    "eta",
    "model_loss_mean",
    "model_losses",
];

pub const UPDATE_COLUMNS: [&str; 9] = [
    "iteration",
    "update",
    "batch_return",
    "surrogate_improvement",
    "kl",
    "grad_norm",
    "line_search_steps",
    "accepted",
    "fictitious",
];

pub const CHECK_COLUMNS: [&str; 9] = [
    "iteration",
    "update",
    "ratio",
    "passed",
    "continue",
    "eta_mean",
    "eta",
    "batch_mean",
    "real_return",
];

fn opt_bool(b: Option<bool>) -> String {
    b.map(|b| b.to_string()).unwrap_or_default()
}

/// Streams run artifacts to disk, flushing after every outer iteration so a
/// failed run leaves a partial log behind.
pub(crate) struct RunWriter {
    dir: PathBuf,
    run: csv::Writer<File>,
    updates: csv::Writer<File>,
    checks: csv::Writer<File>,
    log: BufWriter<File>,
    fictitious: bool,
}

impl RunWriter {
    pub fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let open = |name: &str, header: &[&str]| -> Result<csv::Writer<File>> {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            w.write_record(header)?;
            Ok(w)
        };
        let mut log = BufWriter::new(File::create(dir.join("run.log"))?);
        writeln!(log, "# metrpo run log")?;
        writeln!(log, "# code_hash = {CODE_HASH}")?;
        writeln!(log, "# config begin")?;
        log.write_all(cfg.to_text().as_bytes())?;
        writeln!(log, "# config end")?;
        log.flush()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            run: open("run.csv", &RUN_COLUMNS)?,
            updates: open("updates.csv", &UPDATE_COLUMNS)?,
            checks: open("validation.csv", &CHECK_COLUMNS)?,
            log,
            fictitious: cfg.algorithm != super::Algorithm::ModelFreeTrpo,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn update(&mut self, r: &UpdateRecord) -> Result<()> {
        let s = &r.stats;
        self.updates.write_record([
            r.iteration.to_string(),
            r.update.to_string(),
            fmt_f64(s.batch_return),
            fmt_f64(s.surrogate_improvement),
            fmt_f64(s.kl),
            fmt_f64(s.grad_norm),
            s.line_search_steps.map(|k| k.to_string()).unwrap_or_default(),
            s.accepted.to_string(),
            self.fictitious.to_string(),
        ])?;
        Ok(())
    }

    pub fn check(&mut self, c: &CheckRecord) -> Result<()> {
        self.checks.write_record([
            c.iteration.to_string(),
            c.update.to_string(),
            fmt_opt(c.ratio),
            opt_bool(c.passed),
            c.continue_flag.to_string(),
            fmt_opt(c.eta_mean()),
            fmt_list(&c.eta),
            fmt_opt(c.batch_mean),
            fmt_opt(c.real),
        ])?;
        Ok(())
    }

    pub fn iteration(&mut self, r: &IterationRecord) -> Result<()> {
        self.run.write_record([
            r.iteration.to_string(),
            r.real_steps.to_string(),
            fmt_f64(r.real_return_mean),
            fmt_f64(r.real_return_stderr),
            r.inner_updates.to_string(),
            fmt_opt(mean(&r.eta)),
            fmt_list(&r.eta),
            fmt_opt(mean(&r.model_losses)),
            fmt_list(&r.model_losses),
        ])?;
        writeln!(
            self.log,
            "iteration {}: real_steps={} real_return={:.6} stderr={:.6} inner_updates={} eta_mean={}",
            r.iteration,
            r.real_steps,
            r.real_return_mean,
            r.real_return_stderr,
            r.inner_updates,
            mean(&r.eta).map_or("-".into(), |e| format!("{e:.6}")),
        )?;
        self.flush()
    }

    pub fn note(&mut self, line: &str) -> Result<()> {
        writeln!(self.log, "{line}")?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.run.flush()?;
        self.updates.flush()?;
        self.checks.flush()?;
        self.log.flush()?;
        Ok(())
    }
}

/// Parses the config block written at the top of `run.log`, together with
/// the recorded code hash.
pub fn read_log_header(text: &str) -> Result<(RunConfig, Option<String>)> {
    let mut hash = None;
    let mut body = String::new();
    let mut inside = false;
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("# code_hash = ") {
            hash = Some(h.trim().to_string());
        } else if line == "# config begin" {
            inside = true;
        } else if line == "# config end" {
            return Ok((RunConfig::parse_text(&body)?, hash));
        } else if inside {
            body.push_str(line);
            body.push('\n');
        }
    }
    Err(crate::error::Error::InvalidConfig("run log has no complete config block".into()))
}
