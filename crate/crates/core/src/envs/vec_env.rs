use super::{EnvFamily, StepResult};
use crate::error::{Error, Result};
use crate::nn::Actions;
use crate::rng::{self, tag};

/// Steps every slot independently. Pure: no auto-reset, no shared state.
pub fn step_all<F: EnvFamily>(
    family: &F,
    levels: &[F::Level],
    states: &[F::State],
    actions: &Actions,
) -> Result<Vec<(F::State, StepResult)>> {
    if levels.len() != states.len() || states.len() != actions.len() {
        return Err(Error::Shape(format!(
            "slot count mismatch: {} levels, {} states, {} actions",
            levels.len(),
            states.len(),
            actions.len()
        )));
    }
    levels
        .iter()
        .zip(states)
        .enumerate()
        .map(|(i, (level, state))| family.step(level, state, actions.get(i)))
        .collect()
}

/// Per-slot bookkeeping persisted across rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState<S> {
    pub level_seed: u64,
    pub state: S,
    pub obs: Vec<f64>,
    /// Number of episodes started in this slot, including the current one.
    pub episodes: u64,
    pub episode_return: f64,
    /// Level to use at the next reset; `None` draws a fresh procedural level.
    pub assigned_level: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotStep {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Undiscounted return of the episode that just ended.
    pub episode_return: Option<f64>,
}

/// N independent slots behind one synchronous call. A slot that finishes is
/// reset immediately; its next observation is the post-reset one and the
/// `done` flag marks the boundary.
#[derive(Debug, Clone)]
pub struct VecEnv<F: EnvFamily> {
    family: F,
    seed: u64,
    levels: Vec<F::Level>,
    slots: Vec<SlotState<F::State>>,
}

impl<F: EnvFamily> VecEnv<F> {
    pub fn new(family: F, n_slots: usize, seed: u64) -> Self {
        let mut env = VecEnv {
            family,
            seed,
            levels: Vec::with_capacity(n_slots),
            slots: Vec::with_capacity(n_slots),
        };
        for i in 0..n_slots {
            let (level_seed, level, state, obs) = env.start_episode(i, 0, None);
            env.levels.push(level);
            env.slots.push(SlotState {
                level_seed,
                state,
                obs,
                episodes: 1,
                episode_return: 0.0,
                assigned_level: None,
            });
        }
        env
    }

    /// Rebuilds an environment from persisted slot states.
    pub fn from_slots(family: F, seed: u64, slots: Vec<SlotState<F::State>>) -> Self {
        let levels = slots.iter().map(|s| family.level(s.level_seed)).collect();
        VecEnv {
            family,
            seed,
            levels,
            slots,
        }
    }

    fn start_episode(
        &self,
        slot: usize,
        episode: u64,
        assigned: Option<u64>,
    ) -> (u64, F::Level, F::State, Vec<f64>) {
        let level_seed = assigned
            .unwrap_or_else(|| rng::derive(self.seed, &[tag::LEVEL_DRAW, slot as u64, episode]));
        let episode_seed = rng::derive(self.seed, &[tag::EPISODE, slot as u64, episode]);
        let level = self.family.level(level_seed);
        let (state, obs) = self.family.reset(&level, episode_seed);
        (level_seed, level, state, obs)
    }

    pub fn family(&self) -> &F {
        &self.family
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.family.obs_dim()
    }

    pub fn slots(&self) -> &[SlotState<F::State>] {
        &self.slots
    }

    /// Current observations, row-major `n_slots x obs_dim`.
    pub fn observations(&self) -> Vec<f64> {
        self.slots.iter().flat_map(|s| s.obs.iter().copied()).collect()
    }

    /// Sets the level each slot will use from its next reset on.
    pub fn assign_levels(&mut self, levels: &[Option<u64>]) -> Result<()> {
        if levels.len() != self.slots.len() {
            return Err(Error::Shape("assign_levels: slot count mismatch".into()));
        }
        for (slot, &l) in self.slots.iter_mut().zip(levels) {
            slot.assigned_level = l;
        }
        Ok(())
    }

    pub fn step(&mut self, actions: &Actions) -> Result<Vec<SlotStep>> {
        let states: Vec<F::State> = self.slots.iter().map(|s| s.state.clone()).collect();
        let results = step_all(&self.family, &self.levels, &states, actions)?;
        let mut out = Vec::with_capacity(results.len());
        for (i, (state, res)) in results.into_iter().enumerate() {
            let mut ret = None;
            {
                let slot = &mut self.slots[i];
                slot.episode_return += res.reward;
                if res.done {
                    ret = Some(slot.episode_return);
                } else {
                    slot.state = state;
                    slot.obs = res.obs;
                }
            }
            if res.done {
                let (episode, assigned) = (self.slots[i].episodes, self.slots[i].assigned_level);
                let (level_seed, level, state, obs) = self.start_episode(i, episode, assigned);
                let slot = &mut self.slots[i];
                slot.level_seed = level_seed;
                slot.state = state;
                slot.obs = obs;
                slot.episodes += 1;
                slot.episode_return = 0.0;
                self.levels[i] = level;
            }
            out.push(SlotStep {
                reward: res.reward,
                done: res.done,
                success: res.success,
                episode_return: ret,
            });
        }
        Ok(out)
    }
}
