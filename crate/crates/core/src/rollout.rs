//! Outer-loop data collection: N slots for K steps under the behavior policy.

use crate::envs::{EnvFamily, VecEnv};
use crate::error::{Error, Result};
use crate::nn::{self, Action, Actions, DistParams, ParamTree};
use crate::rng::{self, tag};

/// Completed-episode statistics observed while collecting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeStats {
    pub returns: Vec<f64>,
    pub successes: usize,
}

impl EpisodeStats {
    pub fn mean_return(&self) -> f64 {
        if self.returns.is_empty() {
            f64::NAN
        } else {
            self.returns.iter().sum::<f64>() / self.returns.len() as f64
        }
    }
}

/// One outer-loop dataset. Every per-transition array is slot-major:
/// transition `(slot, t)` lives at index `slot * n_steps + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub n_steps: usize,
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Actions,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub behavior_log_probs: Vec<f64>,
    /// Behavior-policy distribution at every visited state.
    pub behavior_dist: DistParams,
    pub values: Vec<f64>,
    pub bootstrap_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    pub episodes: EpisodeStats,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }
}

/// Rolls the behavior policy `params` forward for `n_steps` in every slot.
///
/// Action noise for slot `i` comes from its own stream keyed by
/// `(policy_seed, i)`, so adding slots leaves existing slots untouched.
pub fn collect<F: EnvFamily>(
    params: &ParamTree,
    venv: &mut VecEnv<F>,
    n_steps: usize,
    policy_seed: u64,
) -> Result<RolloutBatch> {
    let n = venv.n_slots();
    let obs_dim = venv.obs_dim();
    if params.spec().input_dim != obs_dim {
        return Err(Error::Shape(format!(
            "policy expects {} inputs, environment emits {obs_dim}",
            params.spec().input_dim
        )));
    }
    let mut rngs: Vec<_> = (0..n)
        .map(|i| rng::stream(policy_seed, &[tag::POLICY, i as u64]))
        .collect();

    let total = n * n_steps;
    let mut obs_tm = Vec::with_capacity(total * obs_dim);
    let mut actions_tm: Vec<Action> = Vec::with_capacity(total);
    let mut rewards_tm = Vec::with_capacity(total);
    let mut dones_tm = Vec::with_capacity(total);
    let mut log_probs_tm = Vec::with_capacity(total);
    let mut values_tm = Vec::with_capacity(total);
    let mut dists_tm: Vec<DistParams> = Vec::with_capacity(n_steps);
    let mut episodes = EpisodeStats::default();

    for _ in 0..n_steps {
        let obs = venv.observations();
        let (dist, values) = nn::forward(params, &obs)?;
        let step_actions: Vec<Action> = (0..n).map(|i| dist.sample(i, &mut rngs[i])).collect();
        let batch_actions = Actions::from_actions(&step_actions)?;
        let lp = nn::log_prob(&dist, &batch_actions)?;
        let results = venv.step(&batch_actions)?;
        for r in &results {
            rewards_tm.push(r.reward);
            dones_tm.push(r.done);
            if let Some(ret) = r.episode_return {
                episodes.returns.push(ret);
                episodes.successes += r.success as usize;
            }
        }
        obs_tm.extend(obs);
        actions_tm.extend(step_actions);
        log_probs_tm.extend(lp);
        values_tm.extend(values);
        dists_tm.push(dist);
    }
    let (_, bootstrap_values) = nn::forward(params, &venv.observations())?;

    // time-major index t * n + slot  ->  slot-major slot * n_steps + t
    let perm: Vec<usize> = (0..n)
        .flat_map(|slot| (0..n_steps).map(move |t| t * n + slot))
        .collect();
    let gather = |v: &[f64]| perm.iter().map(|&j| v[j]).collect::<Vec<f64>>();
    let all_dists = concat_dists(&dists_tm)?;
    let actions = Actions::from_actions(&actions_tm)?;

    Ok(RolloutBatch {
        n_envs: n,
        n_steps,
        obs_dim,
        obs: perm
            .iter()
            .flat_map(|&j| obs_tm[j * obs_dim..(j + 1) * obs_dim].iter().copied())
            .collect(),
        actions: actions.select(&perm),
        rewards: gather(&rewards_tm),
        dones: perm.iter().map(|&j| dones_tm[j]).collect(),
        behavior_log_probs: gather(&log_probs_tm),
        behavior_dist: all_dists.select(&perm),
        values: gather(&values_tm),
        bootstrap_values,
        advantages: vec![0.0; total],
        targets: vec![0.0; total],
        episodes,
    })
}

fn concat_dists(parts: &[DistParams]) -> Result<DistParams> {
    let Some(first) = parts.first() else {
        return Ok(DistParams::Categorical {
            n_actions: 2,
            logits: Vec::new(),
        });
    };
    let mut out = first.clone();
    for p in &parts[1..] {
        match (&mut out, p) {
            (
                DistParams::Categorical { logits, .. },
                DistParams::Categorical { logits: more, .. },
            ) => logits.extend(more),
            (
                DistParams::Gaussian { mean, log_std, .. },
                DistParams::Gaussian {
                    mean: m2,
                    log_std: s2,
                    ..
                },
            ) => {
                mean.extend(m2);
                log_std.extend(s2);
            }
            _ => return Err(Error::Shape("mixed distribution heads".into())),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvFamily, PointNavFamily, VecEnv};
    use crate::nn::{init_params, Activation, MlpSpec};

    fn setup(n: usize) -> (ParamTree, VecEnv<PointNavFamily>) {
        let fam = PointNavFamily {
            episode_cap: 20,
            ..Default::default()
        };
        let spec = MlpSpec {
            input_dim: 6,
            hidden_widths: vec![8],
            activation: Activation::Tanh,
            head: fam.action_head(),
        };
        (init_params(&spec, 1).unwrap(), VecEnv::new(fam, n, 3))
    }

    #[test]
    fn single_transition_log_prob_matches_direct_call() {
        let (p, mut env) = setup(1);
        let obs = env.observations();
        let b = collect(&p, &mut env, 1, 5).unwrap();
        let (d, v) = nn::forward(&p, &obs).unwrap();
        assert_eq!(b.behavior_log_probs, nn::log_prob(&d, &b.actions).unwrap());
        assert_eq!(b.values, v);
        assert_eq!(b.obs, obs);
    }

    #[test]
    fn ratio_is_exactly_one_at_collection() {
        let (p, mut env) = setup(4);
        let b = collect(&p, &mut env, 16, 2).unwrap();
        let (d, v) = nn::forward(&p, &b.obs).unwrap();
        let lp = nn::log_prob(&d, &b.actions).unwrap();
        for (a, c) in lp.iter().zip(&b.behavior_log_probs) {
            assert_eq!(a - c, 0.0);
        }
        assert_eq!(v, b.values);
        assert_eq!(d, b.behavior_dist);
    }

    #[test]
    fn collection_is_deterministic() {
        let (p, mut e1) = setup(3);
        let (_, mut e2) = setup(3);
        assert_eq!(
            collect(&p, &mut e1, 10, 8).unwrap(),
            collect(&p, &mut e2, 10, 8).unwrap()
        );
    }

    #[test]
    fn growing_n_keeps_existing_slot_trajectories() {
        let (p, mut small) = setup(2);
        let (_, mut big) = setup(5);
        for round in 0..3 {
            let a = collect(&p, &mut small, 12, round).unwrap();
            let b = collect(&p, &mut big, 12, round).unwrap();
            let k = 2 * 12;
            assert_eq!(a.rewards[..], b.rewards[..k]);
            assert_eq!(a.obs[..], b.obs[..k * 6]);
            assert_eq!(a.behavior_log_probs[..], b.behavior_log_probs[..k]);
        }
    }
}
