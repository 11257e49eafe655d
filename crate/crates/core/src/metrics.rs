//! Outer-loop diagnostics: divergence from the behavior policy, the
//! data-to-divergence ratio (DDR), and solve-rate evaluation.

use crate::envs::EnvFamily;
use crate::error::{Error, Result};
use crate::nn::{self, Action, Actions, ParamTree};
use crate::rng::{self, tag};
use crate::rollout::RolloutBatch;

/// One row of the per-update log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub update_index: usize,
    pub env_steps: u64,
    /// Mean KL(behavior || updated) over the batch's visited states, in nats.
    pub mean_kl_behavior: f64,
    /// Transitions per nat of KL from the behavior policy.
    pub ddr: f64,
    pub pre_clip_grad_norm: f64,
    pub post_clip_grad_norm: f64,
    pub param_update_l2: f64,
    pub mean_return: f64,
    pub solve_rate: f64,
    pub entropy: f64,
    pub lr_effective: f64,
}

impl MetricsRecord {
    /// A row with every measured field set to NaN.
    pub fn empty(update_index: usize, env_steps: u64) -> Self {
        MetricsRecord {
            update_index,
            env_steps,
            mean_kl_behavior: f64::NAN,
            ddr: f64::NAN,
            pre_clip_grad_norm: f64::NAN,
            post_clip_grad_norm: f64::NAN,
            param_update_l2: f64::NAN,
            mean_return: f64::NAN,
            solve_rate: f64::NAN,
            entropy: f64::NAN,
            lr_effective: f64::NAN,
        }
    }
}

/// Mean over all visited states of KL(pi_behavior || pi_params).
pub fn kl_to_behavior(batch: &RolloutBatch, params: &ParamTree) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let current = nn::policy(params, &batch.obs)?;
    let kls = nn::kl(&batch.behavior_dist, &current)?;
    Ok(kls.iter().sum::<f64>() / kls.len() as f64)
}

/// `n_transitions / mean_kl`, or `+inf` when the policy did not move.
pub fn ddr(n_transitions: usize, mean_kl: f64) -> Result<f64> {
    if !(mean_kl >= 0.0) {
        return Err(Error::InvalidArgument(format!("mean KL must be >= 0, got {mean_kl}")));
    }
    if mean_kl == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(n_transitions as f64 / mean_kl)
}

/// Geometric mean of the finite, positive per-update DDR values.
pub fn run_ddr_aggregate(ddrs: &[f64]) -> Result<f64> {
    let logs: Vec<f64> = ddrs
        .iter()
        .filter(|d| d.is_finite() && **d > 0.0)
        .map(|d| d.ln())
        .collect();
    if logs.is_empty() {
        return Err(Error::InvalidArgument("no finite DDR values to aggregate".into()));
    }
    Ok((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub solve_rate: f64,
    pub mean_return: f64,
    /// Success fraction per evaluated level, in input order.
    pub per_level: Vec<f64>,
}

/// Runs `episodes_per_level` stochastic episodes on every level and reports
/// the success fraction. Episodes stop at the level's own cap or at
/// `step_limit`, whichever comes first; hitting the limit counts as failure.
pub fn evaluate_solve_rate<F: EnvFamily>(
    params: &ParamTree,
    family: &F,
    level_seeds: &[u64],
    episodes_per_level: usize,
    seed: u64,
    step_limit: Option<usize>,
) -> Result<EvalOutcome> {
    if level_seeds.is_empty() || episodes_per_level == 0 {
        return Err(Error::InvalidArgument("evaluation needs levels and episodes".into()));
    }
    let levels: Vec<F::Level> = level_seeds.iter().map(|&s| family.level(s)).collect();
    let total = levels.len() * episodes_per_level;
    let level_of = |e: usize| e / episodes_per_level;
    let mut rngs = Vec::with_capacity(total);
    let mut states = Vec::with_capacity(total);
    let mut obs = Vec::with_capacity(total);
    for e in 0..total {
        let (l, k) = (level_of(e) as u64, (e % episodes_per_level) as u64);
        let (s, o) = family.reset(&levels[level_of(e)], rng::derive(seed, &[tag::EVAL, l, k]));
        rngs.push(rng::stream(seed, &[tag::EVAL, l, k, 1]));
        states.push(s);
        obs.push(o);
    }
    let mut active: Vec<usize> = (0..total).collect();
    let mut success = vec![false; total];
    let mut returns = vec![0.0; total];
    let mut steps = 0usize;
    while !active.is_empty() && step_limit.map_or(true, |lim| steps < lim) {
        let batch_obs: Vec<f64> = active.iter().flat_map(|&e| obs[e].iter().copied()).collect();
        let dist = nn::policy(params, &batch_obs)?;
        let actions: Vec<Action> = active
            .iter()
            .enumerate()
            .map(|(row, &e)| dist.sample(row, &mut rngs[e]))
            .collect();
        let actions = Actions::from_actions(&actions)?;
        let mut still = Vec::with_capacity(active.len());
        for (row, &e) in active.iter().enumerate() {
            let (s, r) = family.step(&levels[level_of(e)], &states[e], actions.get(row))?;
            returns[e] += r.reward;
            if r.done {
                success[e] = r.success;
            } else {
                states[e] = s;
                obs[e] = r.obs;
                still.push(e);
            }
        }
        active = still;
        steps += 1;
    }
    let per_level: Vec<f64> = (0..levels.len())
        .map(|l| {
            let wins = (0..episodes_per_level)
                .filter(|&k| success[l * episodes_per_level + k])
                .count();
            wins as f64 / episodes_per_level as f64
        })
        .collect();
    Ok(EvalOutcome {
        solve_rate: success.iter().filter(|&&s| s).count() as f64 / total as f64,
        mean_return: returns.iter().sum::<f64>() / total as f64,
        per_level,
    })
}
