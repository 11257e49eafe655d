//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are rejected. Every
//! key and its meaning is listed in [`KEYS`].

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::schedule::{derive_schedule, ScalingStrategy, Schedule};
use crate::curriculum::SflConfig;
use crate::envs::{ChainMdpParams, PointNavFamily};
use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec};
use crate::ppo::{PpoConfig, PpoMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Chain,
    PointNav,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    None,
    MoreMinibatches,
    BiggerMinibatchesFixedLr,
    BiggerMinibatchesSqrtLr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub chain: ChainMdpParams,
    pub pointnav: PointNavFamily,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// `mode` inside holds the resolved PPO variant; `com` is kept separately
    /// so that switching `mode` back and forth does not lose it.
    pub ppo: PpoConfig,
    pub com: f64,
    pub strategy: StrategyKind,
    pub strategy_minibatch_size: usize,
    pub strategy_n_minibatches: usize,
    pub strategy_base_minibatch_size: usize,
    pub strategy_base_lr: f64,
    pub total_env_steps: u64,
    pub seed: u64,
    pub eval_levels: usize,
    pub eval_episodes: usize,
    pub eval_interval: usize,
    pub eval_seed: u64,
    pub checkpoint_interval: usize,
    pub sfl_enabled: bool,
    pub sfl: SflConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::PointNav,
            chain: ChainMdpParams {
                n_states: 8,
                episode_cap: 16,
                slip_prob: 0.0,
            },
            pointnav: PointNavFamily::default(),
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            ppo: PpoConfig {
                n_envs: 64,
                n_steps: 64,
                ..PpoConfig::default()
            },
            com: 32.0,
            strategy: StrategyKind::None,
            strategy_minibatch_size: 128,
            strategy_n_minibatches: 32,
            strategy_base_minibatch_size: 128,
            strategy_base_lr: 3e-4,
            total_env_steps: 64 * 64 * 100,
            seed: 0,
            eval_levels: 64,
            eval_episodes: 2,
            eval_interval: 1,
            eval_seed: 1_000_003,
            checkpoint_interval: 10,
            sfl_enabled: false,
            sfl: SflConfig::default(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("task", "environment family: chain | pointnav"),
    ("chain_n_states", "chain length (>= 2)"),
    ("chain_episode_cap", "chain step cap per episode"),
    ("chain_slip_prob", "probability that a chain move is reversed"),
    ("pointnav_episode_cap", "point-mass step cap per episode"),
    ("pointnav_force_gain_min", "lower bound of the per-level force gain"),
    ("pointnav_force_gain_max", "upper bound of the per-level force gain"),
    ("pointnav_friction_min", "lower bound of the per-level friction, in (0,1)"),
    ("pointnav_friction_max", "upper bound of the per-level friction, in (0,1)"),
    ("pointnav_radius_min", "lower bound of the per-level success radius"),
    ("pointnav_radius_max", "upper bound of the per-level success radius"),
    ("hidden", "comma-separated hidden layer widths"),
    ("activation", "hidden activation: tanh | relu"),
    ("gamma", "discount factor"),
    ("gae_lambda", "GAE decay"),
    ("clip_eps", "ratio clipping half-width (inf disables clipping)"),
    ("vf_coef", "value loss coefficient"),
    ("ent_coef", "entropy bonus coefficient"),
    ("n_envs", "parallel environments"),
    ("n_steps", "rollout steps per environment per update"),
    ("n_epochs", "passes over each rollout batch"),
    ("n_minibatches", "minibatches per epoch (strategy none)"),
    ("lr", "Adam learning rate (strategy none)"),
    ("max_grad_norm", "global gradient-norm clip"),
    ("mode", "ppo | ewma"),
    ("com", "center of mass of the EWMA proximal policy, in minibatch steps"),
    ("value_clip", "clip value predictions around the rollout values: true | false"),
    ("lr_anneal", "anneal the learning rate linearly to 0 at the final update"),
    ("adv_norm", "normalize advantages over each batch"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("strategy", "none | more_minibatches | bigger_minibatches_fixed_lr | bigger_minibatches_sqrt_lr"),
    ("strategy_minibatch_size", "fixed minibatch size for more_minibatches"),
    ("strategy_n_minibatches", "fixed minibatch count for the bigger_minibatches strategies"),
    ("strategy_base_minibatch_size", "reference minibatch size for the square-root rule"),
    ("strategy_base_lr", "reference learning rate for the square-root rule"),
    ("total_env_steps", "environment-step budget"),
    ("seed", "run seed"),
    ("eval_levels", "number of held-out evaluation levels"),
    ("eval_episodes", "evaluation episodes per level"),
    ("eval_interval", "evaluate every this many updates"),
    ("eval_seed", "seed of the evaluation levels and episodes"),
    ("checkpoint_interval", "checkpoint every this many updates (0 = only at the end)"),
    ("sfl", "learnability-filtered curriculum: true | false"),
    ("sfl_rollout_length", "step cap of the scoring rollouts"),
    ("sfl_sample_ratio", "fraction of slots drawn from the level buffer"),
    ("sfl_filter_batch", "candidate levels scored per refresh"),
    ("sfl_buffer_size", "levels kept per refresh"),
    ("sfl_update_period", "updates between buffer refreshes"),
    ("sfl_episodes_per_level", "scoring episodes per candidate level"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for key {key}"))),
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => {
                self.task = match v {
                    "chain" => TaskKind::Chain,
                    "pointnav" => TaskKind::PointNav,
                    _ => return Err(Error::Config(format!("unknown task {v:?}"))),
                }
            }
            "chain_n_states" => self.chain.n_states = parse(key, v)?,
            "chain_episode_cap" => self.chain.episode_cap = parse(key, v)?,
            "chain_slip_prob" => self.chain.slip_prob = parse(key, v)?,
            "pointnav_episode_cap" => self.pointnav.episode_cap = parse(key, v)?,
            "pointnav_force_gain_min" => self.pointnav.force_gain.0 = parse(key, v)?,
            "pointnav_force_gain_max" => self.pointnav.force_gain.1 = parse(key, v)?,
            "pointnav_friction_min" => self.pointnav.friction.0 = parse(key, v)?,
            "pointnav_friction_max" => self.pointnav.friction.1 = parse(key, v)?,
            "pointnav_radius_min" => self.pointnav.success_radius.0 = parse(key, v)?,
            "pointnav_radius_max" => self.pointnav.success_radius.1 = parse(key, v)?,
            "hidden" => {
                self.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|w| parse(key, w)).collect::<Result<_>>()?
                }
            }
            "activation" => {
                self.activation = match v {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    _ => return Err(Error::Config(format!("unknown activation {v:?}"))),
                }
            }
            "gamma" => self.ppo.gamma = parse(key, v)?,
            "gae_lambda" => self.ppo.gae_lambda = parse(key, v)?,
            "clip_eps" => self.ppo.clip_eps = parse(key, v)?,
            "vf_coef" => self.ppo.vf_coef = parse(key, v)?,
            "ent_coef" => self.ppo.ent_coef = parse(key, v)?,
            "n_envs" => self.ppo.n_envs = parse(key, v)?,
            "n_steps" => self.ppo.n_steps = parse(key, v)?,
            "n_epochs" => self.ppo.n_epochs = parse(key, v)?,
            "n_minibatches" => self.ppo.n_minibatches = parse(key, v)?,
            "lr" => self.ppo.lr = parse(key, v)?,
            "max_grad_norm" => self.ppo.max_grad_norm = parse(key, v)?,
            "mode" => {
                self.ppo.mode = match v {
                    "ppo" => PpoMode::Standard,
                    "ewma" => PpoMode::Ewma { com: self.com },
                    _ => return Err(Error::Config(format!("unknown mode {v:?}"))),
                }
            }
            "com" => {
                self.com = parse(key, v)?;
                if let PpoMode::Ewma { .. } = self.ppo.mode {
                    self.ppo.mode = PpoMode::Ewma { com: self.com };
                }
            }
            "value_clip" => self.ppo.value_clip = parse_bool(key, v)?,
            "lr_anneal" => self.ppo.lr_anneal = parse_bool(key, v)?,
            "adv_norm" => self.ppo.adv_norm = parse_bool(key, v)?,
            "adam_beta1" => self.ppo.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.ppo.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.ppo.adam_eps = parse(key, v)?,
            "strategy" => {
                self.strategy = match v {
                    "none" => StrategyKind::None,
                    "more_minibatches" => StrategyKind::MoreMinibatches,
                    "bigger_minibatches_fixed_lr" => StrategyKind::BiggerMinibatchesFixedLr,
                    "bigger_minibatches_sqrt_lr" => StrategyKind::BiggerMinibatchesSqrtLr,
                    _ => return Err(Error::Config(format!("unknown strategy {v:?}"))),
                }
            }
            "strategy_minibatch_size" => self.strategy_minibatch_size = parse(key, v)?,
            "strategy_n_minibatches" => self.strategy_n_minibatches = parse(key, v)?,
            "strategy_base_minibatch_size" => self.strategy_base_minibatch_size = parse(key, v)?,
            "strategy_base_lr" => self.strategy_base_lr = parse(key, v)?,
            "total_env_steps" => self.total_env_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "eval_levels" => self.eval_levels = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "sfl" => self.sfl_enabled = parse_bool(key, v)?,
            "sfl_rollout_length" => self.sfl.rollout_length = parse(key, v)?,
            "sfl_sample_ratio" => self.sfl.sample_ratio = parse(key, v)?,
            "sfl_filter_batch" => self.sfl.filter_batch = parse(key, v)?,
            "sfl_buffer_size" => self.sfl.buffer_size = parse(key, v)?,
            "sfl_update_period" => self.sfl.update_period = parse(key, v)?,
            "sfl_episodes_per_level" => self.sfl.episodes_per_level = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let s = match key {
            "task" => match self.task {
                TaskKind::Chain => "chain".into(),
                TaskKind::PointNav => "pointnav".into(),
            },
            "chain_n_states" => self.chain.n_states.to_string(),
            "chain_episode_cap" => self.chain.episode_cap.to_string(),
            "chain_slip_prob" => self.chain.slip_prob.to_string(),
            "pointnav_episode_cap" => self.pointnav.episode_cap.to_string(),
            "pointnav_force_gain_min" => self.pointnav.force_gain.0.to_string(),
            "pointnav_force_gain_max" => self.pointnav.force_gain.1.to_string(),
            "pointnav_friction_min" => self.pointnav.friction.0.to_string(),
            "pointnav_friction_max" => self.pointnav.friction.1.to_string(),
            "pointnav_radius_min" => self.pointnav.success_radius.0.to_string(),
            "pointnav_radius_max" => self.pointnav.success_radius.1.to_string(),
            "hidden" => join(&self.hidden),
            "activation" => match self.activation {
                Activation::Tanh => "tanh".into(),
                Activation::Relu => "relu".into(),
            },
            "gamma" => self.ppo.gamma.to_string(),
            "gae_lambda" => self.ppo.gae_lambda.to_string(),
            "clip_eps" => self.ppo.clip_eps.to_string(),
            "vf_coef" => self.ppo.vf_coef.to_string(),
            "ent_coef" => self.ppo.ent_coef.to_string(),
            "n_envs" => self.ppo.n_envs.to_string(),
            "n_steps" => self.ppo.n_steps.to_string(),
            "n_epochs" => self.ppo.n_epochs.to_string(),
            "n_minibatches" => self.ppo.n_minibatches.to_string(),
            "lr" => self.ppo.lr.to_string(),
            "max_grad_norm" => self.ppo.max_grad_norm.to_string(),
            "mode" => match self.ppo.mode {
                PpoMode::Standard => "ppo".into(),
                PpoMode::Ewma { .. } => "ewma".into(),
            },
            "com" => self.com.to_string(),
            "value_clip" => self.ppo.value_clip.to_string(),
            "lr_anneal" => self.ppo.lr_anneal.to_string(),
            "adv_norm" => self.ppo.adv_norm.to_string(),
            "adam_beta1" => self.ppo.adam_beta1.to_string(),
            "adam_beta2" => self.ppo.adam_beta2.to_string(),
            "adam_eps" => self.ppo.adam_eps.to_string(),
            "strategy" => match self.strategy {
                StrategyKind::None => "none".into(),
                StrategyKind::MoreMinibatches => "more_minibatches".into(),
                StrategyKind::BiggerMinibatchesFixedLr => "bigger_minibatches_fixed_lr".into(),
                StrategyKind::BiggerMinibatchesSqrtLr => "bigger_minibatches_sqrt_lr".into(),
            },
            "strategy_minibatch_size" => self.strategy_minibatch_size.to_string(),
            "strategy_n_minibatches" => self.strategy_n_minibatches.to_string(),
            "strategy_base_minibatch_size" => self.strategy_base_minibatch_size.to_string(),
            "strategy_base_lr" => self.strategy_base_lr.to_string(),
            "total_env_steps" => self.total_env_steps.to_string(),
            "seed" => self.seed.to_string(),
            "eval_levels" => self.eval_levels.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "eval_seed" => self.eval_seed.to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            "sfl" => self.sfl_enabled.to_string(),
            "sfl_rollout_length" => self.sfl.rollout_length.to_string(),
            "sfl_sample_ratio" => self.sfl.sample_ratio.to_string(),
            "sfl_filter_batch" => self.sfl.filter_batch.to_string(),
            "sfl_buffer_size" => self.sfl.buffer_size.to_string(),
            "sfl_update_period" => self.sfl.update_period.to_string(),
            "sfl_episodes_per_level" => self.sfl.episodes_per_level.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        };
        Ok(s)
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key in [`KEYS`] order; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// First eight bytes of the SHA-256 of the canonical text.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn scaling_strategy(&self) -> ScalingStrategy {
        match self.strategy {
            StrategyKind::None => ScalingStrategy::Fixed {
                n_minibatches: self.ppo.n_minibatches,
                lr: self.ppo.lr,
            },
            StrategyKind::MoreMinibatches => ScalingStrategy::MoreMinibatches {
                minibatch_size: self.strategy_minibatch_size,
                lr: self.ppo.lr,
            },
            StrategyKind::BiggerMinibatchesFixedLr => ScalingStrategy::BiggerMinibatchesFixedLr {
                n_minibatches: self.strategy_n_minibatches,
                lr: self.ppo.lr,
            },
            StrategyKind::BiggerMinibatchesSqrtLr => ScalingStrategy::BiggerMinibatchesSqrtLr {
                n_minibatches: self.strategy_n_minibatches,
                base_minibatch_size: self.strategy_base_minibatch_size,
                base_lr: self.strategy_base_lr,
            },
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        derive_schedule(&self.scaling_strategy(), self.ppo.n_envs, self.ppo.n_steps)
    }

    /// PPO settings with the scaling strategy applied.
    pub fn effective_ppo(&self) -> Result<PpoConfig> {
        let s = self.schedule()?;
        Ok(PpoConfig {
            n_minibatches: s.n_minibatches,
            lr: s.lr,
            ..self.ppo.clone()
        })
    }

    pub fn total_updates(&self) -> usize {
        (self.total_env_steps / self.ppo.batch_size().max(1) as u64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_ppo()?.validate()?;
        match self.task {
            TaskKind::Chain => self.chain.validate()?,
            TaskKind::PointNav => self.pointnav.validate()?,
        }
        if self.eval_levels == 0 || self.eval_episodes == 0 || self.eval_interval == 0 {
            return Err(Error::Config(
                "eval_levels, eval_episodes and eval_interval must be >= 1".into(),
            ));
        }
        if self.sfl_enabled {
            self.sfl.validate()?;
        }
        Ok(())
    }

    pub fn mlp_spec(&self, input_dim: usize, head: crate::nn::Head) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_widths: self.hidden.clone(),
            activation: self.activation,
            head,
        }
    }
}
