//! Learnability-filtered level sampling.
//!
//! Every `update_period` updates a batch of fresh procedural levels is scored
//! by how close the current policy's success rate is to one half, the best
//! `buffer_size` are kept, and a fraction `sample_ratio` of the training slots
//! is filled from that buffer with the rest drawn at random.

use std::fmt::Write as _;

use rand::Rng;

use crate::envs::EnvFamily;
use crate::error::{Error, Result};
use crate::metrics::evaluate_solve_rate;
use crate::nn::ParamTree;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct SflConfig {
    pub rollout_length: usize,
    pub sample_ratio: f64,
    pub filter_batch: usize,
    pub buffer_size: usize,
    pub update_period: usize,
    pub episodes_per_level: usize,
}

impl Default for SflConfig {
    fn default() -> Self {
        SflConfig {
            rollout_length: 512,
            sample_ratio: 0.5,
            filter_batch: 256,
            buffer_size: 32,
            update_period: 8,
            episodes_per_level: 4,
        }
    }
}

impl SflConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_size == 0 || self.buffer_size > self.filter_batch {
            return Err(Error::Config("need 1 <= buffer_size <= filter_batch".into()));
        }
        if !(0.0..=1.0).contains(&self.sample_ratio) {
            return Err(Error::Config("sample_ratio must lie in [0, 1]".into()));
        }
        if self.rollout_length == 0 || self.update_period == 0 || self.episodes_per_level == 0 {
            return Err(Error::Config(
                "rollout_length, update_period and episodes_per_level must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferEntry {
    pub level_seed: u64,
    pub score: f64,
    pub scored_at: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelBuffer {
    pub capacity: usize,
    /// Sorted by score descending, ties by seed ascending.
    pub entries: Vec<BufferEntry>,
}

impl LevelBuffer {
    pub fn new(capacity: usize) -> Self {
        LevelBuffer {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One line per entry, for the run log.
    pub fn dump(&self, update_index: usize) -> String {
        let mut s = String::new();
        for (rank, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                s,
                "update={update_index} rank={rank} level={} score={} scored_at={}",
                e.level_seed, e.score, e.scored_at
            );
        }
        s
    }
}

/// Variance of a Bernoulli success indicator; peaks at 0.25 when p = 0.5.
pub fn learnability(success_rate: f64) -> f64 {
    success_rate * (1.0 - success_rate)
}

pub fn score_learnability<F: EnvFamily>(
    params: &ParamTree,
    family: &F,
    level_seeds: &[u64],
    rollout_length: usize,
    episodes_per_level: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if episodes_per_level == 0 {
        return Err(Error::InvalidArgument("episodes_per_level must be >= 1".into()));
    }
    if level_seeds.is_empty() {
        return Ok(Vec::new());
    }
    let out = evaluate_solve_rate(
        params,
        family,
        level_seeds,
        episodes_per_level,
        seed,
        Some(rollout_length),
    )?;
    Ok(out.per_level.into_iter().map(learnability).collect())
}

/// Keeps the `capacity` highest-scoring of `candidates`.
pub fn select_top(candidates: &[(u64, f64)], capacity: usize, scored_at: usize) -> LevelBuffer {
    let mut entries: Vec<BufferEntry> = candidates
        .iter()
        .map(|&(level_seed, score)| BufferEntry {
            level_seed,
            score,
            scored_at,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.level_seed.cmp(&b.level_seed))
    });
    entries.truncate(capacity);
    LevelBuffer { capacity, entries }
}

/// Scores `filter_batch` fresh levels and replaces the buffer with the best.
pub fn refresh_buffer<F: EnvFamily>(
    params: &ParamTree,
    family: &F,
    cfg: &SflConfig,
    update_index: usize,
    seed: u64,
) -> Result<LevelBuffer> {
    let seeds: Vec<u64> = (0..cfg.filter_batch as u64)
        .map(|i| rng::derive(seed, &[tag::FILTER, i]))
        .collect();
    let scores = score_learnability(
        params,
        family,
        &seeds,
        cfg.rollout_length,
        cfg.episodes_per_level,
        rng::derive(seed, &[tag::EVAL]),
    )?;
    let candidates: Vec<(u64, f64)> = seeds.into_iter().zip(scores).collect();
    Ok(select_top(&candidates, cfg.buffer_size, update_index))
}

/// `round(sample_ratio * n_slots)` levels drawn uniformly with replacement
/// from the buffer, followed by fresh random levels.
pub fn sample_training_levels(
    buffer: &LevelBuffer,
    n_slots: usize,
    sample_ratio: f64,
    seed: u64,
) -> Result<Vec<u64>> {
    let n_buffer = (sample_ratio * n_slots as f64).round() as usize;
    if n_buffer > 0 && buffer.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot sample from an empty level buffer".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[tag::CURRICULUM]);
    Ok((0..n_slots)
        .map(|i| {
            if i < n_buffer {
                buffer.entries[rng.gen_range(0..buffer.entries.len())].level_seed
            } else {
                rng::derive(seed, &[tag::LEVEL_DRAW, i as u64])
            }
        })
        .collect())
}
