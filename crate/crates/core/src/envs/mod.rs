//! Cheap native environments and the vectorized slot facade.

mod chain;
mod pointnav;
mod vec_env;

pub use chain::{
    chain_reset, chain_step, value_iteration, ChainFamily, ChainMdpParams, ChainState, LEFT, RIGHT,
};
pub use pointnav::{
    pointnav_reset, pointnav_step, PointNavFamily, PointNavParams, PointNavState, DT,
};
pub use vec_env::{step_all, SlotState, SlotStep, VecEnv};

use std::fmt::Debug;

use crate::error::Result;
use crate::nn::{ActionRef, Head};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// A procedural family of environments. A level is a deterministic function
/// of its seed; an episode is a deterministic function of the level, the
/// episode seed and the action sequence.
pub trait EnvFamily: Clone + Send + Sync {
    type Level: Clone + Debug + Send + Sync;
    type State: Clone + Debug + PartialEq + Send + Sync;

    fn obs_dim(&self) -> usize;

    /// Policy head the family expects.
    fn action_head(&self) -> Head;

    fn level(&self, level_seed: u64) -> Self::Level;

    fn reset(&self, level: &Self::Level, episode_seed: u64) -> (Self::State, Vec<f64>);

    fn step(
        &self,
        level: &Self::Level,
        state: &Self::State,
        action: ActionRef<'_>,
    ) -> Result<(Self::State, StepResult)>;

    /// Flat encoding used by checkpoints; must round-trip bitwise.
    fn encode_state(state: &Self::State) -> Vec<u64>;

    fn decode_state(words: &[u64]) -> Result<Self::State>;
}
