//! Dense-matrix kernel, conditioner MLP, Adam and the seeded sampler.

mod adam;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use mlp::{MlpCache, MlpGrads, MlpOutput, MlpParams};
pub use rng::{derive_seed, Rng};
