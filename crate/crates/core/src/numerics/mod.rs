//! Dense MLP math with hand-written reverse-mode gradients, Adam, global-norm
//! clipping and a flat parameter checkpoint format.

mod adam;
mod checkpoint;
pub mod finite_diff;
mod grad;
mod mlp;
pub mod rng;

pub use adam::AdamState;
pub use checkpoint::{load_params, save_params, CheckpointManifest, CHECKPOINT_FORMAT};
pub use grad::{clip_by_global_norm, GradientBundle, ParamShape};
pub use mlp::{Activation, ForwardCache, Mlp};
