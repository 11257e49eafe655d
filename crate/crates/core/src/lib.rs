//! Vectorized PPO and PPO-EWMA with instrumentation for the outer loop:
//! regularization strength, update noise, data-to-divergence ratio, plateau
//! diagnostics, parallelization recipes and a learnability curriculum.

pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub mod envs;
pub mod rollout;
pub mod advantage;
pub mod metrics;
pub mod ppo;
pub mod curriculum;
pub mod sgd_analog;
pub mod harness;
