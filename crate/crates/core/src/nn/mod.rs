//! Dense actor/critic networks with exact reverse-mode gradients, Adam and
//! global-norm gradient clipping.

mod adam;
mod clip;
pub(crate) mod dist;
mod mlp;
mod params;
mod spec;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use clip::{global_norm_clip, global_norm_clip_in_place};
pub use dist::{entropy, kl, log_prob, Action, ActionRef, Actions, DistParams, LOG_STD_MAX, LOG_STD_MIN};
pub use mlp::{forward, grad, policy, HeadGrad, HeadLoss, HeadOutputs};
pub use params::{init_params, GradTree, Layout, ParamTree};
pub use spec::{Activation, Head, MlpSpec};
