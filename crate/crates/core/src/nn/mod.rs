//! Dense-network substrate: matrices, sequential MLPs with reverse-mode
//! gradients (including through additive weight shifts) and Adam.

mod adam;
mod matrix;
mod mlp;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::{dot, Matrix};
pub use mlp::{Activation, Dense, Mlp, MlpGrads, Tape, EXP_LOGIT_CAP};
pub use params::Params;
