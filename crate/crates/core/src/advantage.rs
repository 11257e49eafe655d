//! Generalized advantage estimation and value targets.

use crate::error::{Error, Result};
use crate::rollout::RolloutBatch;

/// Fills `advantages` and `targets` in place.
///
/// `done` at step t means the transition ended its episode; the following
/// observation belongs to a fresh episode, so neither the next value nor the
/// next advantage flows back across it. Targets are `values + advantages`,
/// computed once before any optimization step.
pub fn compute_gae(batch: &mut RolloutBatch, gamma: f64, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "gamma and lambda must lie in [0, 1], got {gamma}, {lambda}"
        )));
    }
    let k = batch.n_steps;
    for slot in 0..batch.n_envs {
        let base = slot * k;
        let mut next_value = batch.bootstrap_values[slot];
        let mut next_adv = 0.0;
        for t in (0..k).rev() {
            let i = base + t;
            let live = if batch.dones[i] { 0.0 } else { 1.0 };
            let delta = batch.rewards[i] + gamma * live * next_value - batch.values[i];
            let adv = delta + gamma * lambda * live * next_adv;
            batch.advantages[i] = adv;
            batch.targets[i] = batch.values[i] + adv;
            next_value = batch.values[i];
            next_adv = adv;
        }
    }
    Ok(())
}

/// Zero-mean, unit-std copy of `advantages` over the whole batch.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    if advantages.is_empty() {
        return Vec::new();
    }
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    advantages.iter().map(|a| (a - mean) / std).collect()
}
