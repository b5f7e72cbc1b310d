use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::config::RunConfig;
use super::engine::run;
use super::final_return;
use super::record::{fmt_f64, IterationRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Optimizer,
    Models,
    SamplingMode,
    ValidationMode,
}

impl AblationAxis {
    /// Config key the axis varies.
    pub fn key(&self) -> &'static str {
        match self {
            AblationAxis::Optimizer => "optimizer",
            AblationAxis::Models => "models",
            AblationAxis::SamplingMode => "sampling_mode",
            AblationAxis::ValidationMode => "validation_mode",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Models => "k",
            other => other.key(),
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "optimizer" => AblationAxis::Optimizer,
            "k" | "K" | "models" => AblationAxis::Models,
            "sampling_mode" => AblationAxis::SamplingMode,
            "validation_mode" => AblationAxis::ValidationMode,
            other => return Err(Error::InvalidConfig(format!("unknown ablation axis `{other}`"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct AblationCell {
    pub value: String,
    pub seed: u64,
    /// Learning curve, or the error that ended the cell.
    pub outcome: std::result::Result<Vec<IterationRecord>, String>,
}

impl AblationCell {
    pub fn final_return(&self) -> Option<f64> {
        self.outcome.as_ref().ok().and_then(|r| final_return(r))
    }
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    /// `(value, mean final return, stderr, completed cells)` per value, in
    /// input order.
    pub fn summary(&self) -> Vec<(String, Option<f64>, Option<f64>, usize)> {
        let mut values: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !values.contains(&c.value.as_str()) {
                values.push(&c.value);
            }
        }
        values
            .into_iter()
            .map(|v| {
                let finals: Vec<f64> =
                    self.cells.iter().filter(|c| c.value == v).filter_map(AblationCell::final_return).collect();
                let n = finals.len();
                if n == 0 {
                    return (v.to_string(), None, None, 0);
                }
                let est = crate::env::ReturnEstimate::from_samples(&finals);
                (v.to_string(), Some(est.mean), Some(est.stderr), n)
            })
            .collect()
    }
}

/// Runs every `(value, seed)` cell. A failing cell is recorded and the rest
/// proceed. With `out`, each cell writes its own run directory
/// `<axis>=<value>/seed_<seed>/` and `summary.csv` collects final returns.
pub fn run_ablation(
    base: &RunConfig,
    axis: AblationAxis,
    values: &[String],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    // reject bad values before anything runs
    for v in values {
        let mut cfg = base.clone();
        cfg.set(axis.key(), v)?;
    }
    let mut cells = Vec::with_capacity(values.len() * seeds.len());
    for v in values {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.set(axis.key(), v)?;
            cfg.seed = seed;
            let dir = out.map(|d| d.join(format!("{axis}={v}")).join(format!("seed_{seed}")));
            log::info!("ablation cell {axis}={v} seed {seed}");
            let outcome = run(&cfg, dir.as_deref()).map(|o| o.records).map_err(|e| {
                log::warn!("ablation cell {axis}={v} seed {seed} failed: {e}");
                e.to_string()
            });
            cells.push(AblationCell {
                value: v.clone(),
                seed,
                outcome,
            });
        }
    }
    let table = AblationTable { axis, cells };
    if let Some(dir) = out {
        write_summary_csv(&dir.join("summary.csv"), &table)?;
    }
    Ok(table)
}

fn write_summary_csv(path: &Path, table: &AblationTable) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "value", "seed", "status", "iterations", "real_steps", "final_return"])?;
    for c in &table.cells {
        let (status, iterations, steps) = match &c.outcome {
            Ok(r) => ("ok".to_string(), r.len().to_string(), r.last().map_or(0, |x| x.real_steps).to_string()),
            Err(e) => (format!("error: {e}"), String::new(), String::new()),
        };
        w.write_record([
            table.axis.to_string(),
            c.value.clone(),
            c.seed.to_string(),
            status,
            iterations,
            steps,
            c.final_return().map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
