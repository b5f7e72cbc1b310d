//! Experiment driver: run configuration, the outer training loops, ablation
//! sweeps, the one-dimensional model-bias demo and run artifacts.

mod ablation;
mod bias;
mod commands;
mod config;
mod engine;
mod record;

pub use ablation::{run_ablation, AblationAxis, AblationCell, AblationTable};
pub use bias::{
    double_well, double_well_grad, in_global_basin, run_bias_demo, write_bias_curve_csv, BiasDemoConfig,
    BiasDemoReport, BiasSampling, BASIN_BOUNDARY, GLOBAL_MIN, LOCAL_MIN,
};
pub use commands::{demo_bias_to, eval_checkpoint_to, replay_log, ReplayOutcome};
pub use config::{Algorithm, RunConfig};
pub use engine::{evaluate_checkpoint, run, run_metrpo, run_vanilla, RunOutput};
pub use record::{
    fmt_f64, read_log_header, CheckRecord, IterationRecord, UpdateRecord, CHECK_COLUMNS, RUN_COLUMNS, UPDATE_COLUMNS,
};

use crate::env::{evaluate_from_states, EnvSpec};
use crate::error::{Error, Result};
use crate::numerics::rng::{seeded, substream};
use crate::policy::GaussianPolicy;

/// Content hash of the crate sources this binary was built from.
pub const CODE_HASH: &str = env!("METRPO_CODE_HASH");

/// Mean real return over the last two iterations (or the only one).
pub fn final_return(records: &[IterationRecord]) -> Option<f64> {
    let tail = &records[records.len().saturating_sub(2)..];
    record::mean(&tail.iter().map(|r| r.real_return_mean).collect::<Vec<_>>())
}

/// Returns of the energy-shaping controller and of zero torque from the
/// run's evaluation start states, and the swing-up success threshold placed
/// `fraction` of the way from the second to the first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingUpReference {
    pub reference_return: f64,
    pub passive_return: f64,
    pub threshold: f64,
}

pub fn swing_up_reference(cfg: &RunConfig, fraction: f64) -> Result<SwingUpReference> {
    let env = cfg.build_env()?;
    let EnvSpec::Pendulum(p) = &env else {
        return Err(Error::Unsupported(format!("no reference controller for `{}`", env.id())));
    };
    let starts = env.sample_initial_states(cfg.eval_episodes, &mut substream(cfg.seed, "eval-states", 0));
    let mut reference = Vec::with_capacity(starts.len());
    let mut passive = Vec::with_capacity(starts.len());
    for s0 in &starts {
        reference.push(env.run_episode(s0, |s| vec![p.energy_shaping_action(s)])?);
        passive.push(env.run_episode(s0, |_| vec![0.0])?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (r, z) = (mean(&reference), mean(&passive));
    Ok(SwingUpReference {
        reference_return: r,
        passive_return: z,
        threshold: z + fraction * (r - z),
    })
}

/// Real return of `policy` on the run's evaluation start states.
pub fn evaluate_on_run_states(cfg: &RunConfig, policy: &GaussianPolicy) -> Result<f64> {
    let env = cfg.build_env()?;
    let starts = env.sample_initial_states(cfg.eval_episodes, &mut substream(cfg.seed, "eval-states", 0));
    Ok(evaluate_from_states(&env, policy, &starts, &mut seeded(cfg.seed), cfg.eval_deterministic)?.mean)
}

/// Iterations in which the mean model return rose by more than `tol`
/// between two consecutive evaluations of the inner loop while the real
/// return fell by more than `tol`. `tol = 0` flags any opposite movement.
pub fn divergent_iterations(checks: &[CheckRecord], tol: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for pair in checks.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.iteration != b.iteration || out.last() == Some(&a.iteration) {
            continue;
        }
        if let (Some(ea), Some(eb), Some(ra), Some(rb)) = (a.eta_mean(), b.eta_mean(), a.real, b.real) {
            if eb - ea > tol && ra - rb > tol {
                out.push(a.iteration);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
