use super::{EnvFamily, StepResult};
use crate::error::{Error, Result};
use crate::nn::{ActionRef, Head};
use crate::rng::{self, tag};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainMdpParams {
    pub n_states: usize,
    pub episode_cap: usize,
    pub slip_prob: f64,
}

impl ChainMdpParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::Config("chain needs at least 2 states".into()));
        }
        if self.episode_cap == 0 {
            return Err(Error::Config("episode_cap must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::Config("slip_prob must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// The episode seed rides along so that slips are a pure function of
/// `(episode_seed, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainState {
    pub position: usize,
    pub steps_elapsed: usize,
    pub episode_seed: u64,
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub fn chain_reset(params: &ChainMdpParams, episode_seed: u64) -> (ChainState, Vec<f64>) {
    let s = ChainState {
        position: 0,
        steps_elapsed: 0,
        episode_seed,
    };
    (s, one_hot(params.n_states, 0))
}

pub fn chain_step(params: &ChainMdpParams, state: &ChainState, action: usize) -> (ChainState, StepResult) {
    let slipped = params.slip_prob > 0.0
        && rng::uniform(state.episode_seed, &[tag::SLIP, state.steps_elapsed as u64])
            < params.slip_prob;
    let go_right = (action == RIGHT) != slipped;
    let position = if go_right {
        (state.position + 1).min(params.n_states - 1)
    } else {
        state.position.saturating_sub(1)
    };
    let next = ChainState {
        position,
        steps_elapsed: state.steps_elapsed + 1,
        episode_seed: state.episode_seed,
    };
    let success = position == params.n_states - 1;
    (
        next,
        StepResult {
            obs: one_hot(params.n_states, position),
            reward: if success { 1.0 } else { 0.0 },
            done: success || next.steps_elapsed >= params.episode_cap,
            success,
        },
    )
}

/// Finite-horizon value iteration over the episode cap. Returns the optimal
/// expected discounted return from every state with a full step budget.
pub fn value_iteration(params: &ChainMdpParams, gamma: f64) -> Vec<f64> {
    let n = params.n_states;
    let goal = n - 1;
    let mut v = vec![0.0; n];
    for _ in 0..params.episode_cap {
        let mut next = vec![0.0; n];
        for (s, out) in next.iter_mut().enumerate().take(goal) {
            let backup = |dest: usize| {
                if dest == goal {
                    1.0
                } else {
                    gamma * v[dest]
                }
            };
            let right = (s + 1).min(goal);
            let left = s.saturating_sub(1);
            let q_right = (1.0 - params.slip_prob) * backup(right) + params.slip_prob * backup(left);
            let q_left = (1.0 - params.slip_prob) * backup(left) + params.slip_prob * backup(right);
            *out = q_right.max(q_left);
        }
        v = next;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainFamily(pub ChainMdpParams);

impl EnvFamily for ChainFamily {
    type Level = ChainMdpParams;
    type State = ChainState;

    fn obs_dim(&self) -> usize {
        self.0.n_states
    }

    fn action_head(&self) -> Head {
        Head::Categorical { n_actions: 2 }
    }

    fn level(&self, _level_seed: u64) -> ChainMdpParams {
        self.0
    }

    fn reset(&self, level: &ChainMdpParams, episode_seed: u64) -> (ChainState, Vec<f64>) {
        chain_reset(level, episode_seed)
    }

    fn step(
        &self,
        level: &ChainMdpParams,
        state: &ChainState,
        action: ActionRef<'_>,
    ) -> Result<(ChainState, StepResult)> {
        match action {
            ActionRef::Discrete(a) if a <= RIGHT => Ok(chain_step(level, state, a)),
            _ => Err(Error::InvalidArgument("chain actions are 0 (left) or 1 (right)".into())),
        }
    }

    fn encode_state(s: &ChainState) -> Vec<u64> {
        vec![s.position as u64, s.steps_elapsed as u64, s.episode_seed]
    }

    fn decode_state(w: &[u64]) -> Result<ChainState> {
        if w.len() != 3 {
            return Err(Error::Shape("chain state needs 3 words".into()));
        }
        Ok(ChainState {
            position: w[0] as usize,
            steps_elapsed: w[1] as usize,
            episode_seed: w[2],
        })
    }
}
