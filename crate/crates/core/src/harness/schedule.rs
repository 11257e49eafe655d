//! Minibatch count and learning rate when the number of environments changes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingStrategy {
    /// Use the configured minibatch count and learning rate as they are.
    Fixed { n_minibatches: usize, lr: f64 },
    /// Keep minibatch size and learning rate; add minibatches.
    MoreMinibatches { minibatch_size: usize, lr: f64 },
    /// Keep the minibatch count; minibatches grow with the batch.
    BiggerMinibatchesFixedLr { n_minibatches: usize, lr: f64 },
    /// As above, with the learning rate scaled by the square root of the
    /// minibatch growth.
    BiggerMinibatchesSqrtLr {
        n_minibatches: usize,
        base_minibatch_size: usize,
        base_lr: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub n_minibatches: usize,
    pub minibatch_size: usize,
    pub lr: f64,
}

fn split(batch: usize, n_minibatches: usize) -> Result<usize> {
    if n_minibatches == 0 || batch % n_minibatches != 0 {
        return Err(Error::Config(format!(
            "batch of {batch} transitions is not divisible into {n_minibatches} minibatches"
        )));
    }
    Ok(batch / n_minibatches)
}

pub fn derive_schedule(strategy: &ScalingStrategy, n_envs: usize, n_steps: usize) -> Result<Schedule> {
    let batch = n_envs * n_steps;
    if batch == 0 {
        return Err(Error::Config("n_envs and n_steps must be >= 1".into()));
    }
    match *strategy {
        ScalingStrategy::Fixed { n_minibatches, lr }
        | ScalingStrategy::BiggerMinibatchesFixedLr { n_minibatches, lr } => Ok(Schedule {
            n_minibatches,
            minibatch_size: split(batch, n_minibatches)?,
            lr,
        }),
        ScalingStrategy::MoreMinibatches { minibatch_size, lr } => {
            if minibatch_size == 0 || batch % minibatch_size != 0 {
                return Err(Error::Config(format!(
                    "batch of {batch} transitions is not divisible by minibatch size {minibatch_size}"
                )));
            }
            Ok(Schedule {
                n_minibatches: batch / minibatch_size,
                minibatch_size,
                lr,
            })
        }
        ScalingStrategy::BiggerMinibatchesSqrtLr {
            n_minibatches,
            base_minibatch_size,
            base_lr,
        } => {
            if base_minibatch_size == 0 {
                return Err(Error::Config("base_minibatch_size must be >= 1".into()));
            }
            let minibatch_size = split(batch, n_minibatches)?;
            Ok(Schedule {
                n_minibatches,
                minibatch_size,
                lr: base_lr * (minibatch_size as f64 / base_minibatch_size as f64).sqrt(),
            })
        }
    }
}
