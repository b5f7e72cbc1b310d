//! Early stopping for the inner policy-optimization loop.
//!
//! Every `check_every` updates the current policy is compared against the
//! cached returns of the best policy so far. A passing check refreshes that
//! baseline; once checks have been failing for `patience` updates the inner
//! loop stops.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Fraction of ensemble members under which the return improved.
    Ensemble,
    /// Improvement under the first member only.
    OneModel,
    /// Improvement of the true-environment return.
    Real,
    /// Improvement of the mean return of the optimizer's own batch.
    TrpoMean,
    /// No checks; stop after exactly 50 updates.
    NoEarly50,
    /// No checks; stop after exactly 5 updates.
    NoEarly5,
}

pub const VALIDATION_MODES: [&str; 6] = ["ensemble", "one_model", "real", "trpo_mean", "no_early_50", "no_early_5"];

impl fmt::Display for ValidationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationMode::Ensemble => "ensemble",
            ValidationMode::OneModel => "one_model",
            ValidationMode::Real => "real",
            ValidationMode::TrpoMean => "trpo_mean",
            ValidationMode::NoEarly50 => "no_early_50",
            ValidationMode::NoEarly5 => "no_early_5",
        })
    }
}

impl FromStr for ValidationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ensemble" => ValidationMode::Ensemble,
            "one_model" => ValidationMode::OneModel,
            "real" => ValidationMode::Real,
            "trpo_mean" => ValidationMode::TrpoMean,
            "no_early_50" => ValidationMode::NoEarly50,
            "no_early_5" => ValidationMode::NoEarly5,
            other => return Err(Error::InvalidConfig(format!("unknown validation mode `{other}`"))),
        })
    }
}

impl ValidationMode {
    /// Fixed update count for the modes that never check.
    pub fn fixed_updates(&self) -> Option<usize> {
        match self {
            ValidationMode::NoEarly50 => Some(50),
            ValidationMode::NoEarly5 => Some(5),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub mode: ValidationMode,
    pub threshold: f64,
    pub check_every: usize,
    /// Updates tolerated after the first failing check.
    pub patience: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            mode: ValidationMode::Ensemble,
            threshold: 0.7,
            check_every: 5,
            patience: 25,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.check_every == 0 {
            return Err(Error::InvalidConfig("check_every must be positive".into()));
        }
        Ok(())
    }
}

/// `(1/K) Σ_k 1[new_k > old_k]`.
pub fn improvement_ratio(returns_new: &[f64], returns_old: &[f64]) -> Result<f64> {
    if returns_new.len() != returns_old.len() {
        return Err(Error::DimensionMismatch {
            context: "improvement_ratio",
            expected: returns_old.len(),
            got: returns_new.len(),
        });
    }
    if returns_new.is_empty() {
        return Err(Error::InvalidConfig("improvement_ratio needs at least one model".into()));
    }
    let improved = returns_new.iter().zip(returns_old).filter(|(n, o)| n > o).count();
    Ok(improved as f64 / returns_new.len() as f64)
}

/// Return estimates for one policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `η̂` under each ensemble member.
    pub per_model: Vec<f64>,
    /// Mean return of the optimizer's latest fictitious batch.
    pub batch_mean: Option<f64>,
    /// True-environment return.
    pub real: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationVerdict {
    pub update: usize,
    /// Improvement ratio at a check; `None` between checks.
    pub ratio: Option<f64>,
    pub passed: Option<bool>,
    pub continue_flag: bool,
    pub updates_since_last_pass: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationController {
    cfg: ValidationConfig,
    baseline: Evaluation,
    updates: usize,
    last_pass: usize,
    first_fail: Option<usize>,
    stopped: bool,
}

impl ValidationController {
    /// `baseline` holds the returns of the policy at the start of the phase.
    pub fn new(cfg: ValidationConfig, baseline: Evaluation) -> Result<Self> {
        cfg.validate()?;
        let ctl = Self {
            cfg,
            baseline,
            updates: 0,
            last_pass: 0,
            first_fail: None,
            stopped: false,
        };
        if ctl.cfg.mode.fixed_updates().is_none() {
            ctl.scores(&ctl.baseline)?;
        }
        Ok(ctl)
    }

    pub fn config(&self) -> &ValidationConfig {
        &self.cfg
    }

    pub fn baseline(&self) -> &Evaluation {
        &self.baseline
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Whether the next call to [`Self::check_and_update`] needs an evaluation.
    pub fn next_is_check(&self) -> bool {
        self.cfg.mode.fixed_updates().is_none() && (self.updates + 1) % self.cfg.check_every == 0
    }

    /// The values the configured mode compares.
    fn scores<'a>(&self, eval: &'a Evaluation) -> Result<std::borrow::Cow<'a, [f64]>> {
        use std::borrow::Cow;
        Ok(match self.cfg.mode {
            ValidationMode::Ensemble => Cow::Borrowed(&eval.per_model[..]),
            ValidationMode::OneModel => Cow::Borrowed(eval.per_model.get(..1).unwrap_or(&[])),
            ValidationMode::Real => Cow::Owned(vec![eval.real.ok_or(Error::MissingRealReturn)?]),
            ValidationMode::TrpoMean => Cow::Owned(vec![eval
                .batch_mean
                .ok_or_else(|| Error::InvalidConfig("trpo_mean validation needs the batch mean return".into()))?]),
            ValidationMode::NoEarly50 | ValidationMode::NoEarly5 => Cow::Borrowed(&[]),
        })
    }

    /// Records one policy update. At check updates `eval` must describe the
    /// updated policy.
    pub fn check_and_update(&mut self, eval: Option<&Evaluation>) -> Result<ValidationVerdict> {
        if self.stopped {
            return Err(Error::InvalidConfig("validation controller already stopped".into()));
        }
        let is_check = self.next_is_check();
        self.updates += 1;
        let u = self.updates;
        let mut verdict = ValidationVerdict {
            update: u,
            ratio: None,
            passed: None,
            continue_flag: true,
            updates_since_last_pass: 0,
        };
        if let Some(limit) = self.cfg.mode.fixed_updates() {
            verdict.continue_flag = u < limit;
        } else {
            if is_check {
                let eval = eval.ok_or(Error::MissingEvaluation(u))?;
                let new = self.scores(eval)?.into_owned();
                let old = self.scores(&self.baseline)?.into_owned();
                let ratio = improvement_ratio(&new, &old)?;
                let passed = ratio >= self.cfg.threshold;
                verdict.ratio = Some(ratio);
                verdict.passed = Some(passed);
                if passed {
                    self.refresh_baseline(eval);
                    self.last_pass = u;
                    self.first_fail = None;
                } else if self.first_fail.is_none() {
                    self.first_fail = Some(u);
                }
            }
            if let Some(first) = self.first_fail {
                verdict.continue_flag = u - first < self.cfg.patience;
            }
        }
        verdict.updates_since_last_pass = u - self.last_pass;
        self.stopped = !verdict.continue_flag;
        Ok(verdict)
    }

    /// Elementwise running best, so each cached `η̂_old` only increases.
    fn refresh_baseline(&mut self, eval: &Evaluation) {
        let best = |old: f64, new: f64| if new > old { new } else { old };
        if self.baseline.per_model.len() == eval.per_model.len() {
            for (o, n) in self.baseline.per_model.iter_mut().zip(&eval.per_model) {
                *o = best(*o, *n);
            }
        }
        if let (Some(o), Some(n)) = (self.baseline.batch_mean, eval.batch_mean) {
            self.baseline.batch_mean = Some(best(o, n));
        }
        if let (Some(o), Some(n)) = (self.baseline.real, eval.real) {
            self.baseline.real = Some(best(o, n));
        }
    }
}
