//! Outer training loop, run directories and resume.
//!
//! A run directory holds `config.txt` (canonical config), `metrics.csv`,
//! `checkpoint.plab` (latest), `checkpoints/update_NNNNNN.plab`,
//! `final_eval.txt` and, with the curriculum enabled, `curriculum.log`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::{write_atomic, AdamSnapshot, Checkpoint, SlotSnapshot};
use super::config::{StrategyKind, TaskKind, TrainConfig};
use super::log::CsvWriter;
use crate::advantage::compute_gae;
use crate::curriculum::{refresh_buffer, sample_training_levels, LevelBuffer};
use crate::envs::{ChainFamily, EnvFamily, SlotState, VecEnv};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_solve_rate, EvalOutcome, MetricsRecord};
use crate::nn::{init_params, AdamConfig, AdamState, ParamTree};
use crate::ppo::{annealed_lr, update, EwmaState, PpoConfig, PpoMode};
use crate::rng::{self, tag};
use crate::rollout::collect;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.plab";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_EVAL_FILE: &str = "final_eval.txt";
pub const CURRICULUM_LOG: &str = "curriculum.log";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub updates: usize,
    pub env_steps: u64,
    pub final_solve_rate: f64,
    pub final_mean_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResumeOverrides {
    pub com: Option<f64>,
    pub clip_eps: Option<f64>,
    pub lr: Option<f64>,
    pub total_env_steps: Option<u64>,
}

impl ResumeOverrides {
    pub fn is_empty(&self) -> bool {
        *self == ResumeOverrides::default()
    }
}

pub fn eval_level_seeds(cfg: &TrainConfig) -> Vec<u64> {
    (0..cfg.eval_levels as u64)
        .map(|i| rng::derive(cfg.eval_seed, &[tag::LEVEL, i]))
        .collect()
}

fn eval_episode_seed(cfg: &TrainConfig) -> u64 {
    rng::derive(cfg.eval_seed, &[tag::EVAL])
}

struct Trainer<F: EnvFamily> {
    cfg: TrainConfig,
    ppo: PpoConfig,
    total_updates: usize,
    family: F,
    run_dir: PathBuf,
    params: ParamTree,
    adam: AdamState,
    ewma: Option<EwmaState>,
    venv: VecEnv<F>,
    update_index: usize,
    env_steps: u64,
    metrics_rows: u64,
    last_solve_rate: f64,
    buffer: Option<LevelBuffer>,
    eval_levels: Vec<u64>,
    csv: CsvWriter,
}

impl<F: EnvFamily> Trainer<F> {
    fn fresh(cfg: TrainConfig, family: F, run_dir: &Path) -> Result<Self> {
        let ppo = cfg.effective_ppo()?;
        let spec = cfg.mlp_spec(family.obs_dim(), family.action_head());
        let params = init_params(&spec, cfg.seed)?;
        let adam = AdamState::new(&params, adam_config(&ppo));
        let ewma = match ppo.mode {
            PpoMode::Ewma { com } => Some(EwmaState::new(&params, com)?),
            PpoMode::Standard => None,
        };
        let venv = VecEnv::new(family.clone(), ppo.n_envs, rng::derive(cfg.seed, &[tag::ENV]));
        fs::create_dir_all(run_dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(run_dir, e))?;
        let cfg_path = run_dir.join(CONFIG_FILE);
        fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
        if cfg.sfl_enabled {
            let p = run_dir.join(CURRICULUM_LOG);
            fs::write(&p, "").map_err(|e| Error::io(&p, e))?;
        }
        let csv = CsvWriter::create(&run_dir.join(METRICS_FILE))?;
        let mut t = Trainer {
            total_updates: cfg.total_updates(),
            eval_levels: eval_level_seeds(&cfg),
            cfg,
            ppo,
            family,
            run_dir: run_dir.to_path_buf(),
            params,
            adam,
            ewma,
            venv,
            update_index: 0,
            env_steps: 0,
            metrics_rows: 0,
            last_solve_rate: f64::NAN,
            buffer: None,
            csv,
        };
        let initial = t.evaluate()?;
        t.last_solve_rate = initial.solve_rate;
        let mut row = MetricsRecord::empty(0, 0);
        row.solve_rate = initial.solve_rate;
        t.csv.append(&row)?;
        t.metrics_rows = 1;
        Ok(t)
    }

    fn restore(
        cfg: TrainConfig,
        family: F,
        run_dir: &Path,
        ck: &Checkpoint,
        com_override: Option<f64>,
        ck_path: &Path,
    ) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: ck_path.to_path_buf(),
            reason,
        };
        let ppo = cfg.effective_ppo()?;
        let spec = cfg.mlp_spec(family.obs_dim(), family.action_head());
        let params = ParamTree::from_values(&spec, ck.params.clone())?;
        let a = &ck.adam;
        if a.m.len() != params.len() || a.v.len() != params.len() {
            return Err(bad("optimizer state does not match the network".into()));
        }
        let adam = AdamState {
            m: a.m.clone(),
            v: a.v.clone(),
            t: a.t,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        };
        let ewma = match ppo.mode {
            PpoMode::Standard => None,
            PpoMode::Ewma { com } => {
                let (beta, prox) = ck
                    .prox
                    .as_ref()
                    .ok_or_else(|| bad("EWMA run without proximal parameters".into()))?;
                let mut e = EwmaState {
                    prox: ParamTree::from_values(&spec, prox.clone())?,
                    beta: *beta,
                };
                if com_override.is_some() {
                    e.set_com(com)?;
                }
                Some(e)
            }
        };
        if ck.slots.len() != ppo.n_envs {
            return Err(bad(format!(
                "{} environment slots saved, config has {}",
                ck.slots.len(),
                ppo.n_envs
            )));
        }
        let slots = ck
            .slots
            .iter()
            .map(|s| {
                Ok(SlotState {
                    level_seed: s.level_seed,
                    state: F::decode_state(&s.state)?,
                    obs: s.obs.clone(),
                    episodes: s.episodes,
                    episode_return: s.episode_return,
                    assigned_level: s.assigned_level,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let venv = VecEnv::from_slots(family.clone(), ck.venv_seed, slots);
        let csv = CsvWriter::truncate_to(&run_dir.join(METRICS_FILE), ck.metrics_rows as usize)?;
        if cfg.sfl_enabled {
            truncate_curriculum_log(&run_dir.join(CURRICULUM_LOG), ck.update_index as usize)?;
        }
        Ok(Trainer {
            total_updates: cfg.total_updates(),
            eval_levels: eval_level_seeds(&cfg),
            cfg,
            ppo,
            family,
            run_dir: run_dir.to_path_buf(),
            params,
            adam,
            ewma,
            venv,
            update_index: ck.update_index as usize,
            env_steps: ck.env_steps,
            metrics_rows: ck.metrics_rows,
            last_solve_rate: ck.last_solve_rate,
            buffer: ck.buffer.clone(),
            csv,
        })
    }

    fn evaluate(&self) -> Result<EvalOutcome> {
        evaluate_solve_rate(
            &self.params,
            &self.family,
            &self.eval_levels,
            self.cfg.eval_episodes,
            eval_episode_seed(&self.cfg),
            None,
        )
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.cfg.hash(),
            update_index: self.update_index as u64,
            env_steps: self.env_steps,
            metrics_rows: self.metrics_rows,
            last_solve_rate: self.last_solve_rate,
            params: self.params.values().to_vec(),
            prox: self
                .ewma
                .as_ref()
                .map(|e| (e.beta, e.prox.values().to_vec())),
            adam: AdamSnapshot {
                t: self.adam.t,
                lr: self.adam.lr,
                beta1: self.adam.beta1,
                beta2: self.adam.beta2,
                eps: self.adam.eps,
                m: self.adam.m.clone(),
                v: self.adam.v.clone(),
            },
            venv_seed: self.venv.seed(),
            slots: self
                .venv
                .slots()
                .iter()
                .map(|s| SlotSnapshot {
                    level_seed: s.level_seed,
                    episodes: s.episodes,
                    episode_return: s.episode_return,
                    assigned_level: s.assigned_level,
                    obs: s.obs.clone(),
                    state: F::encode_state(&s.state),
                })
                .collect(),
            buffer: self.buffer.clone(),
        }
    }

    fn save_checkpoint(&self) -> Result<()> {
        let bytes = self.checkpoint().encode();
        let numbered = self
            .run_dir
            .join(CHECKPOINT_DIR)
            .join(format!("update_{:06}.plab", self.update_index));
        write_atomic(&numbered, &bytes)?;
        write_atomic(&self.run_dir.join(CHECKPOINT_FILE), &bytes)
    }

    fn curriculum_step(&mut self, u: usize) -> Result<()> {
        let sfl = self.cfg.sfl.clone();
        if u % sfl.update_period == 0 || self.buffer.is_none() {
            let buffer = refresh_buffer(
                &self.params,
                &self.family,
                &sfl,
                u,
                rng::derive(self.cfg.seed, &[tag::FILTER, u as u64]),
            )?;
            let p = self.run_dir.join(CURRICULUM_LOG);
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            f.write_all(buffer.dump(u).as_bytes())
                .map_err(|e| Error::io(&p, e))?;
            self.buffer = Some(buffer);
        }
        let buffer = self.buffer.as_ref().expect("refreshed above");
        let levels = sample_training_levels(
            buffer,
            self.ppo.n_envs,
            sfl.sample_ratio,
            rng::derive(self.cfg.seed, &[tag::CURRICULUM, u as u64]),
        )?;
        let assigned: Vec<Option<u64>> = levels.into_iter().map(Some).collect();
        self.venv.assign_levels(&assigned)
    }

    fn step(&mut self) -> Result<()> {
        let u = self.update_index;
        let seed = self.cfg.seed;
        if self.cfg.sfl_enabled {
            self.curriculum_step(u)?;
        }
        self.adam.lr = if self.ppo.lr_anneal {
            annealed_lr(self.ppo.lr, u, self.total_updates)
        } else {
            self.ppo.lr
        };
        let mut batch = collect(
            &self.params,
            &mut self.venv,
            self.ppo.n_steps,
            rng::derive(seed, &[tag::ROLLOUT, u as u64]),
        )?;
        compute_gae(&mut batch, self.ppo.gamma, self.ppo.gae_lambda)?;
        let out = update(
            &batch,
            &self.params,
            &self.adam,
            self.ewma.as_ref(),
            &self.ppo,
            rng::derive(seed, &[tag::UPDATE, u as u64]),
        )
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("update {u}: {m}")),
            other => other,
        })?;
        if !out.params.is_finite() {
            return Err(Error::NonFinite(format!("update {u}: parameters")));
        }
        self.params = out.params;
        self.adam = out.adam;
        self.ewma = out.ewma;
        self.update_index += 1;
        self.env_steps += batch.len() as u64;

        if self.update_index % self.cfg.eval_interval == 0 || self.update_index == self.total_updates {
            self.last_solve_rate = self.evaluate()?.solve_rate;
        }
        let mut row = out.metrics;
        row.update_index = self.update_index;
        row.env_steps = self.env_steps;
        row.solve_rate = self.last_solve_rate;
        self.csv.append(&row)?;
        self.metrics_rows += 1;

        let every = self.cfg.checkpoint_interval;
        if every > 0 && self.update_index % every == 0 {
            self.save_checkpoint()?;
        }
        Ok(())
    }

    fn run(mut self) -> Result<RunSummary> {
        while self.update_index < self.total_updates {
            self.step()?;
        }
        self.save_checkpoint()?;
        let fin = self.evaluate()?;
        let p = self.run_dir.join(FINAL_EVAL_FILE);
        let text = format!(
            "solve_rate = {}\nmean_return = {}\nupdates = {}\nenv_steps = {}\n",
            fin.solve_rate, fin.mean_return, self.update_index, self.env_steps
        );
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(RunSummary {
            run_dir: self.run_dir,
            updates: self.update_index,
            env_steps: self.env_steps,
            final_solve_rate: fin.solve_rate,
            final_mean_return: fin.mean_return,
        })
    }
}

fn adam_config(ppo: &PpoConfig) -> AdamConfig {
    AdamConfig {
        lr: ppo.lr,
        beta1: ppo.adam_beta1,
        beta2: ppo.adam_beta2,
        eps: ppo.adam_eps,
    }
}

fn truncate_curriculum_log(path: &Path, before_update: usize) -> Result<()> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let kept: String = text
        .lines()
        .filter(|l| {
            l.strip_prefix("update=")
                .and_then(|r| r.split_whitespace().next())
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|n| n < before_update)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Trains from scratch into `run_dir`, replacing any previous run there.
pub fn train(cfg: &TrainConfig, run_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    match cfg.task {
        TaskKind::Chain => Trainer::fresh(cfg.clone(), ChainFamily(cfg.chain.clone()), run_dir)?.run(),
        TaskKind::PointNav => Trainer::fresh(cfg.clone(), cfg.pointnav.clone(), run_dir)?.run(),
    }
}

/// Directory owning a checkpoint file, whether it is the latest one or a
/// numbered one under `checkpoints/`.
pub fn run_dir_of(checkpoint: &Path) -> PathBuf {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    if parent.file_name().is_some_and(|n| n == CHECKPOINT_DIR) {
        parent.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        parent.to_path_buf()
    }
}

/// Loads the checkpoint and its run's config, verifying the config hash.
pub fn load_run(checkpoint: &Path) -> Result<(TrainConfig, Checkpoint)> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = TrainConfig::load(&run_dir_of(checkpoint).join(CONFIG_FILE))?;
    if cfg.hash() != ck.config_hash {
        return Err(Error::Checkpoint {
            path: checkpoint.to_path_buf(),
            reason: "config hash mismatch with the run's config.txt".into(),
        });
    }
    Ok((cfg, ck))
}

/// Continues a run from `checkpoint`. Without `out_dir` the run continues in
/// place; otherwise the metrics log up to the checkpoint is copied into a new
/// run directory and the source is left untouched.
pub fn resume(
    checkpoint: &Path,
    overrides: &ResumeOverrides,
    out_dir: Option<&Path>,
) -> Result<RunSummary> {
    let (mut cfg, ck) = load_run(checkpoint)?;
    let src_dir = run_dir_of(checkpoint);
    if let Some(com) = overrides.com {
        if cfg.ppo.mode == PpoMode::Standard {
            return Err(Error::Config(
                "com override needs an EWMA run (mode = ewma); this run uses mode = ppo".into(),
            ));
        }
        cfg.set("com", &com.to_string())?;
    }
    if let Some(eps) = overrides.clip_eps {
        cfg.ppo.clip_eps = eps;
    }
    if let Some(lr) = overrides.lr {
        cfg.ppo.lr = lr;
        if cfg.strategy == StrategyKind::BiggerMinibatchesSqrtLr {
            cfg.strategy_base_lr = lr;
        }
    }
    if let Some(steps) = overrides.total_env_steps {
        cfg.total_env_steps = steps;
    }
    cfg.validate()?;

    let run_dir = match out_dir {
        Some(d) if d != src_dir => {
            fs::create_dir_all(d.join(CHECKPOINT_DIR)).map_err(|e| Error::io(d, e))?;
            for name in [METRICS_FILE, CURRICULUM_LOG] {
                let from = src_dir.join(name);
                if from.exists() {
                    let to = d.join(name);
                    fs::copy(&from, &to).map_err(|e| Error::io(&to, e))?;
                }
            }
            d.to_path_buf()
        }
        _ => src_dir.clone(),
    };
    let cfg_path = run_dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;

    match cfg.task {
        TaskKind::Chain => {
            let fam = ChainFamily(cfg.chain.clone());
            Trainer::restore(cfg, fam, &run_dir, &ck, overrides.com, checkpoint)?.run()
        }
        TaskKind::PointNav => {
            let fam = cfg.pointnav.clone();
            Trainer::restore(cfg, fam, &run_dir, &ck, overrides.com, checkpoint)?.run()
        }
    }
}

/// Evaluates a checkpoint's policy on `levels` held-out levels.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    levels: Option<usize>,
    episodes: Option<usize>,
    eval_seed: Option<u64>,
) -> Result<EvalOutcome> {
    let (mut cfg, ck) = load_run(checkpoint)?;
    if let Some(l) = levels {
        cfg.eval_levels = l;
    }
    if let Some(e) = episodes {
        cfg.eval_episodes = e;
    }
    if let Some(s) = eval_seed {
        cfg.eval_seed = s;
    }
    fn go<F: EnvFamily>(cfg: &TrainConfig, family: F, values: Vec<f64>) -> Result<EvalOutcome> {
        let spec = cfg.mlp_spec(family.obs_dim(), family.action_head());
        let params = ParamTree::from_values(&spec, values)?;
        evaluate_solve_rate(
            &params,
            &family,
            &eval_level_seeds(cfg),
            cfg.eval_episodes,
            eval_episode_seed(cfg),
            None,
        )
    }
    match cfg.task {
        TaskKind::Chain => go(&cfg, ChainFamily(cfg.chain.clone()), ck.params),
        TaskKind::PointNav => go(&cfg, cfg.pointnav.clone(), ck.params),
    }
}
