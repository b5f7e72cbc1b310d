//! Model-ensemble trust-region policy optimization.
//!
//! The crate learns an ensemble of delta-state dynamics models from real
//! transitions, optimizes a Gaussian policy on fictitious rollouts through
//! the ensemble (BPTT, vanilla policy gradient or TRPO), and gates each
//! inner optimization phase with an ensemble-based validation rule. Analytic
//! control tasks stand in for the real system.

pub mod dynamics;
pub mod env;
mod error;
pub mod experiment;
pub mod numerics;
pub mod optim;
pub mod policy;
pub mod rollout;
pub mod validation;

pub use error::{Error, Result};
