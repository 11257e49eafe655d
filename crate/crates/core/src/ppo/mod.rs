//! PPO and PPO-EWMA: losses, proximal-policy maintenance and the inner
//! optimization loop over one rollout batch.

mod config;
mod ewma;
mod loss;
mod update;

pub use config::{annealed_lr, beta_to_com, com_to_beta, PpoConfig, PpoMode};
pub use ewma::{ewma_update, EwmaState};
pub use loss::{
    clip_loss, decoupled_clip_loss, total_loss, total_loss_grad, value_loss, LossBreakdown,
    Minibatch, PpoObjective,
};
pub use update::{update, UpdateOutput};
