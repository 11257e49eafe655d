use std::cell::Cell;

use super::config::{PpoConfig, PpoMode};
use crate::error::{Error, Result};
use crate::nn::dist::{accumulate_entropy_grad, accumulate_log_prob_grad};
use crate::nn::{self, Actions, GradTree, HeadGrad, HeadLoss, HeadOutputs, ParamTree};
use crate::rollout::RolloutBatch;

/// The slice of a rollout batch one gradient step sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub obs: Vec<f64>,
    pub actions: Actions,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    pub old_values: Vec<f64>,
    pub behavior_log_probs: Vec<f64>,
}

impl Minibatch {
    /// Gathers rows `idx` of `batch`, taking advantages from `advantages`
    /// (which may be the normalized copy).
    pub fn gather(batch: &RolloutBatch, advantages: &[f64], idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Minibatch {
            obs: idx.iter().flat_map(|&i| batch.obs_row(i).iter().copied()).collect(),
            actions: batch.actions.select(idx),
            advantages: pick(advantages),
            targets: pick(&batch.targets),
            old_values: pick(&batch.values),
            behavior_log_probs: pick(&batch.behavior_log_probs),
        }
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// Mean clipped surrogate and its derivative with respect to each row's
/// current log-probability.
struct SurrogateEval {
    mean: f64,
    d_log_prob: Vec<f64>,
    clipped: usize,
}

fn exp_ratio(log_num: f64, log_den: f64) -> Result<f64> {
    let r = (log_num - log_den).exp();
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::NonFinite(format!("probability ratio exp({log_num} - {log_den})")))
    }
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)` per row. When the clipped branch is
/// strictly smaller the row is constant in the parameters.
#[inline]
fn clipped_term(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

fn surrogate(log_probs: &[f64], mb: &Minibatch, eps: f64) -> Result<SurrogateEval> {
    let n = mb.len() as f64;
    let mut eval = SurrogateEval {
        mean: 0.0,
        d_log_prob: vec![0.0; mb.len()],
        clipped: 0,
    };
    for i in 0..mb.len() {
        let r = exp_ratio(log_probs[i], mb.behavior_log_probs[i])?;
        let (v, active) = clipped_term(r, mb.advantages[i], eps);
        eval.mean += v / n;
        if active {
            eval.d_log_prob[i] = r * mb.advantages[i] / n;
        } else {
            eval.clipped += 1;
        }
    }
    Ok(eval)
}

fn decoupled_surrogate(
    log_probs: &[f64],
    prox_log_probs: &[f64],
    mb: &Minibatch,
    eps: f64,
) -> Result<SurrogateEval> {
    let n = mb.len() as f64;
    let mut eval = SurrogateEval {
        mean: 0.0,
        d_log_prob: vec![0.0; mb.len()],
        clipped: 0,
    };
    for i in 0..mb.len() {
        let weight = exp_ratio(prox_log_probs[i], mb.behavior_log_probs[i])?;
        let r_prox = exp_ratio(log_probs[i], prox_log_probs[i])?;
        let (v, active) = clipped_term(r_prox, mb.advantages[i], eps);
        eval.mean += weight * v / n;
        if active {
            eval.d_log_prob[i] = weight * r_prox * mb.advantages[i] / n;
        } else {
            eval.clipped += 1;
        }
    }
    Ok(eval)
}

/// Mean value error and its derivative with respect to each predicted value.
fn value_error(values: &[f64], mb: &Minibatch, clip: Option<f64>) -> (f64, Vec<f64>) {
    let n = mb.len() as f64;
    let mut mean = 0.0;
    let mut d = vec![0.0; mb.len()];
    for i in 0..mb.len() {
        let (v, t) = (values[i], mb.targets[i]);
        let plain = (v - t).powi(2);
        match clip {
            None => {
                mean += plain / n;
                d[i] = 2.0 * (v - t) / n;
            }
            Some(eps) => {
                let old = mb.old_values[i];
                let delta = v - old;
                let v_clipped = old + delta.clamp(-eps, eps);
                let clipped = (v_clipped - t).powi(2);
                if plain >= clipped {
                    mean += plain / n;
                    d[i] = 2.0 * (v - t) / n;
                } else {
                    mean += clipped / n;
                    if delta > -eps && delta < eps {
                        d[i] = 2.0 * (v_clipped - t) / n;
                    }
                }
            }
        }
    }
    (mean, d)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    /// Quantity minimized: `-(surrogate - vf_coef * value_loss + ent_coef * entropy)`.
    pub total: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of rows whose surrogate sat on the clipped branch.
    pub clip_fraction: f64,
}

/// Full objective for one minibatch as a [`HeadLoss`].
///
/// `prox_log_probs` selects the decoupled surrogate; `None` gives standard
/// PPO. The last evaluation's breakdown is kept in `breakdown`.
pub struct PpoObjective<'a> {
    pub minibatch: &'a Minibatch,
    pub prox_log_probs: Option<&'a [f64]>,
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub value_clip: bool,
    pub breakdown: Cell<LossBreakdown>,
}

impl<'a> PpoObjective<'a> {
    pub fn new(minibatch: &'a Minibatch, prox_log_probs: Option<&'a [f64]>, cfg: &PpoConfig) -> Self {
        PpoObjective {
            minibatch,
            prox_log_probs,
            clip_eps: cfg.clip_eps,
            vf_coef: cfg.vf_coef,
            ent_coef: cfg.ent_coef,
            value_clip: cfg.value_clip,
            breakdown: Cell::new(LossBreakdown::default()),
        }
    }
}

impl HeadLoss for PpoObjective<'_> {
    fn evaluate(&self, out: &HeadOutputs) -> Result<(f64, HeadGrad)> {
        let mb = self.minibatch;
        let n = mb.len();
        let lp = nn::log_prob(&out.dist, &mb.actions)?;
        let sur = match self.prox_log_probs {
            Some(prox) => decoupled_surrogate(&lp, prox, mb, self.clip_eps)?,
            None => surrogate(&lp, mb, self.clip_eps)?,
        };
        let (vf, d_vf) = value_error(&out.values, mb, self.value_clip.then_some(self.clip_eps));
        let ent = nn::entropy(&out.dist);
        let mean_ent = ent.iter().sum::<f64>() / n as f64;
        let total = -(sur.mean - self.vf_coef * vf + self.ent_coef * mean_ent);

        let head = match &out.dist {
            nn::DistParams::Categorical { n_actions, .. } => nn::Head::Categorical {
                n_actions: *n_actions,
            },
            nn::DistParams::Gaussian { dim, .. } => nn::Head::DiagonalGaussian { action_dim: *dim },
        };
        let mut g = HeadGrad::zeros(head, n);
        let w: Vec<f64> = sur.d_log_prob.iter().map(|d| -d).collect();
        accumulate_log_prob_grad(&out.dist, &mb.actions, &w, &mut g)?;
        if self.ent_coef != 0.0 {
            accumulate_entropy_grad(&out.dist, &vec![-self.ent_coef / n as f64; n], &mut g);
        }
        g.d_values = d_vf.iter().map(|d| self.vf_coef * d).collect();

        self.breakdown.set(LossBreakdown {
            total,
            surrogate: sur.mean,
            value_loss: vf,
            entropy: mean_ent,
            clip_fraction: sur.clipped as f64 / n as f64,
        });
        Ok((total, g))
    }
}

fn log_probs(params: &ParamTree, mb: &Minibatch) -> Result<Vec<f64>> {
    nn::log_prob(&nn::policy(params, &mb.obs)?, &mb.actions)
}

/// Mean clipped surrogate against the behavior policy.
pub fn clip_loss(params: &ParamTree, mb: &Minibatch, clip_eps: f64) -> Result<f64> {
    Ok(surrogate(&log_probs(params, mb)?, mb, clip_eps)?.mean)
}

/// Mean decoupled surrogate: importance weight `pi_prox / pi_behavior` times
/// the surrogate clipped around the proximal policy.
pub fn decoupled_clip_loss(
    params: &ParamTree,
    prox: &ParamTree,
    mb: &Minibatch,
    clip_eps: f64,
) -> Result<f64> {
    let lp = log_probs(params, mb)?;
    let prox_lp = log_probs(prox, mb)?;
    Ok(decoupled_surrogate(&lp, &prox_lp, mb, clip_eps)?.mean)
}

pub fn value_loss(params: &ParamTree, mb: &Minibatch, value_clip: bool, clip_eps: f64) -> Result<f64> {
    let (_, values) = nn::forward(params, &mb.obs)?;
    Ok(value_error(&values, mb, value_clip.then_some(clip_eps)).0)
}

fn prox_log_probs(prox: Option<&ParamTree>, mb: &Minibatch, cfg: &PpoConfig) -> Result<Option<Vec<f64>>> {
    match (cfg.mode, prox) {
        (PpoMode::Standard, _) => Ok(None),
        (PpoMode::Ewma { .. }, Some(p)) => log_probs(p, mb).map(Some),
        (PpoMode::Ewma { .. }, None) => Err(Error::InvalidArgument(
            "EWMA mode needs proximal parameters".into(),
        )),
    }
}

/// Scalar minimized by the update.
pub fn total_loss(
    params: &ParamTree,
    prox: Option<&ParamTree>,
    mb: &Minibatch,
    cfg: &PpoConfig,
) -> Result<f64> {
    Ok(total_loss_grad(params, prox, mb, cfg)?.0.total)
}

pub fn total_loss_grad(
    params: &ParamTree,
    prox: Option<&ParamTree>,
    mb: &Minibatch,
    cfg: &PpoConfig,
) -> Result<(LossBreakdown, GradTree)> {
    let prox_lp = prox_log_probs(prox, mb, cfg)?;
    let objective = PpoObjective::new(mb, prox_lp.as_deref(), cfg);
    let (_, g) = nn::grad(params, &mb.obs, &objective)?;
    Ok((objective.breakdown.get(), g))
}
