use rand::seq::SliceRandom;

use super::config::{PpoConfig, PpoMode};
use super::ewma::EwmaState;
use super::loss::{total_loss_grad, Minibatch};
use crate::advantage::normalize_advantages;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRecord};
use crate::nn::{self, global_norm_clip_in_place, AdamState, ParamTree};
use crate::rng::{self, tag};
use crate::rollout::RolloutBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutput {
    pub params: ParamTree,
    pub adam: AdamState,
    pub ewma: Option<EwmaState>,
    /// Filled except for `update_index`, `env_steps` and `solve_rate`, which
    /// belong to the caller.
    pub metrics: MetricsRecord,
    pub adam_steps: usize,
    pub ewma_updates: usize,
    pub mean_clip_fraction: f64,
}

/// One inner optimization pass over a rollout batch: `n_epochs` shuffles of
/// all transitions, each split into `n_minibatches` equal minibatches. Every
/// minibatch does loss gradient, global-norm clip, Adam step and, in EWMA
/// mode, a proximal-policy update. Uses the learning rate stored in `adam`.
pub fn update(
    batch: &RolloutBatch,
    params: &ParamTree,
    adam: &AdamState,
    ewma: Option<&EwmaState>,
    cfg: &PpoConfig,
    update_seed: u64,
) -> Result<UpdateOutput> {
    let n = batch.len();
    if n == 0 || n % cfg.n_minibatches != 0 {
        return Err(Error::Config(format!(
            "{n} transitions cannot be split into {} equal minibatches",
            cfg.n_minibatches
        )));
    }
    let mut ewma = match (cfg.mode, ewma) {
        (PpoMode::Ewma { .. }, Some(e)) => Some(e.clone()),
        (PpoMode::Ewma { .. }, None) => {
            return Err(Error::InvalidArgument("EWMA mode needs an EwmaState".into()))
        }
        (PpoMode::Standard, _) => None,
    };
    let advantages = if cfg.adv_norm {
        normalize_advantages(&batch.advantages)
    } else {
        batch.advantages.clone()
    };

    let mut theta = params.clone();
    let mut adam = adam.clone();
    let mb_size = n / cfg.n_minibatches;
    let mut order: Vec<usize> = (0..n).collect();
    let (mut pre_sum, mut post_sum, mut clip_sum) = (0.0, 0.0, 0.0);
    let mut steps = 0usize;
    let mut ewma_updates = 0usize;

    for epoch in 0..cfg.n_epochs {
        let mut shuffler = rng::stream(update_seed, &[tag::SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffler);
        for (k, idx) in order.chunks_exact(mb_size).enumerate() {
            let mb = Minibatch::gather(batch, &advantages, idx);
            let (breakdown, mut g) = total_loss_grad(&theta, ewma.as_ref().map(|e| &e.prox), &mb, cfg)
                .map_err(|e| match e {
                    Error::NonFinite(m) => {
                        Error::NonFinite(format!("epoch {epoch}, minibatch {k}: {m}"))
                    }
                    other => other,
                })?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, minibatch {k}: loss {}",
                    breakdown.total
                )));
            }
            let pre = global_norm_clip_in_place(&mut g, cfg.max_grad_norm);
            pre_sum += pre;
            post_sum += g.norm_l2();
            clip_sum += breakdown.clip_fraction;
            adam.step(&mut theta, &g)?;
            steps += 1;
            if let Some(e) = ewma.as_mut() {
                e.update(&theta)?;
                ewma_updates += 1;
            }
        }
    }

    let kl = metrics::kl_to_behavior(batch, &theta)?;
    let entropy = {
        let d = nn::policy(&theta, &batch.obs)?;
        let h = nn::entropy(&d);
        h.iter().sum::<f64>() / h.len() as f64
    };
    let record = MetricsRecord {
        mean_kl_behavior: kl,
        ddr: metrics::ddr(n, kl)?,
        pre_clip_grad_norm: pre_sum / steps as f64,
        post_clip_grad_norm: post_sum / steps as f64,
        param_update_l2: theta.distance_l2(params),
        mean_return: batch.episodes.mean_return(),
        entropy,
        lr_effective: adam.lr,
        ..MetricsRecord::empty(0, 0)
    };
    Ok(UpdateOutput {
        params: theta,
        adam,
        ewma,
        metrics: record,
        adam_steps: steps,
        ewma_updates,
        mean_clip_fraction: clip_sum / steps as f64,
    })
}
