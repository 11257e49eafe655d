//! Grid sweeps: one run directory per cell and seed, plus `summary.csv`.
//!
//! A sweep file is a config file with two extra kinds of line:
//!
//! ```text
//! axis com = 1,8,32,128
//! axis hidden = 16,16|32,32     # '|' separates values that contain commas
//! seeds = 0,1,2
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::TrainConfig;
use super::log::read_csv;
use super::train::{train, METRICS_FILE};
use crate::error::{Error, Result};
use crate::metrics::run_ddr_aggregate;

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub axes: Vec<(String, Vec<String>)>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub seed: u64,
    pub cell: Vec<(String, String)>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run: String,
    pub seed: u64,
    pub cell: Vec<(String, String)>,
    pub max_solve_rate: f64,
    pub final_solve_rate: f64,
    pub ddr_aggregate: f64,
    pub updates: usize,
    pub env_steps: u64,
}

pub fn parse_axis_values(v: &str) -> Vec<String> {
    let sep = if v.contains('|') { '|' } else { ',' };
    v.split(sep).map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl SweepSpec {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut base_lines = String::new();
        let mut axes = Vec::new();
        let mut seeds = None;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if let Some(rest) = line.strip_prefix("axis ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad axis line {raw:?}")))?;
                axes.push((k.trim().to_string(), parse_axis_values(v)));
            } else if let Some(v) = line.strip_prefix("seeds").and_then(|r| r.trim().strip_prefix('=')) {
                seeds = Some(
                    v.split(',')
                        .map(|s| {
                            s.trim()
                                .parse()
                                .map_err(|_| Error::Config(format!("bad seed {s:?}")))
                        })
                        .collect::<Result<Vec<u64>>>()?,
                );
            } else {
                base_lines.push_str(line);
                base_lines.push('\n');
            }
        }
        let base = TrainConfig::from_text(&base_lines)?;
        let seeds = seeds.unwrap_or_else(|| vec![base.seed]);
        Ok(SweepSpec { base, axes, seeds })
    }

    /// Cells in row-major order over the axes, each repeated per seed.
    pub fn expand(&self) -> Result<Vec<SweepRun>> {
        let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::Config(format!("axis {key} has no values")));
            }
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        let mut runs = Vec::new();
        for (ci, cell) in cells.iter().enumerate() {
            for &seed in &self.seeds {
                let mut config = self.base.clone();
                for (k, v) in cell {
                    config.set(k, v)?;
                }
                config.seed = seed;
                config.validate()?;
                runs.push(SweepRun {
                    name: format!("cell{ci:03}_seed{seed}"),
                    seed,
                    cell: cell.clone(),
                    config,
                });
            }
        }
        Ok(runs)
    }
}

/// Max and final solve rate and aggregate DDR from a run's metrics log.
pub fn summarize_run(run_dir: &Path) -> Result<(f64, f64, f64, usize, u64)> {
    let rows = read_csv(&run_dir.join(METRICS_FILE))?;
    let last = rows
        .last()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no rows", run_dir.display())))?;
    let max = rows
        .iter()
        .map(|r| r.solve_rate)
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let ddrs: Vec<f64> = rows.iter().map(|r| r.ddr).collect();
    let agg = run_ddr_aggregate(&ddrs).unwrap_or(f64::NAN);
    Ok((max, last.solve_rate, agg, last.update_index, last.env_steps))
}

fn header(axes: &[String]) -> String {
    let mut h = vec!["run".to_string(), "seed".to_string()];
    h.extend(axes.iter().cloned());
    h.extend(
        ["max_solve_rate", "final_solve_rate", "ddr_aggregate", "updates", "env_steps"]
            .map(String::from),
    );
    h.join(",")
}

pub fn write_summary(path: &Path, axes: &[String], rows: &[SummaryRow]) -> Result<()> {
    let mut text = header(axes);
    text.push('\n');
    for r in rows {
        let mut f = vec![r.run.clone(), r.seed.to_string()];
        f.extend(r.cell.iter().map(|(_, v)| v.replace(',', ";")));
        f.push(r.max_solve_rate.to_string());
        f.push(r.final_solve_rate.to_string());
        f.push(r.ddr_aggregate.to_string());
        f.push(r.updates.to_string());
        f.push(r.env_steps.to_string());
        text.push_str(&f.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty summary".into()))?
        .split(',')
        .collect();
    if head.len() < 7 || head[0] != "run" || head[1] != "seed" {
        return Err(Error::InvalidArgument("not a sweep summary".into()));
    }
    let axes: Vec<String> = head[2..head.len() - 5].iter().map(|s| s.to_string()).collect();
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidArgument(format!("bad summary number {s:?}")))
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != head.len() {
                return Err(Error::InvalidArgument(format!("bad summary row {l:?}")));
            }
            let a = axes.len();
            Ok(SummaryRow {
                run: f[0].to_string(),
                seed: num(f[1])? as u64,
                cell: axes
                    .iter()
                    .zip(&f[2..2 + a])
                    .map(|(k, v)| (k.clone(), v.to_string()))
                    .collect(),
                max_solve_rate: num(f[2 + a])?,
                final_solve_rate: num(f[3 + a])?,
                ddr_aggregate: num(f[4 + a])?,
                updates: num(f[5 + a])? as usize,
                env_steps: num(f[6 + a])? as u64,
            })
        })
        .collect()
}

/// Runs every cell and seed with at most `workers` concurrent runs and writes
/// `summary.csv` under `out_dir`.
pub fn sweep(spec: &SweepSpec, out_dir: &Path, workers: usize) -> Result<Vec<SummaryRow>> {
    let runs = spec.expand()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let dirs: Vec<PathBuf> = pool.install(|| {
        runs.par_iter()
            .map(|r| {
                let dir = out_dir.join(&r.name);
                train(&r.config, &dir).map(|s| s.run_dir)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = runs
        .iter()
        .zip(&dirs)
        .map(|(r, dir)| {
            let (max, fin, agg, updates, env_steps) = summarize_run(dir)?;
            Ok(SummaryRow {
                run: r.name.clone(),
                seed: r.seed,
                cell: r.cell.clone(),
                max_solve_rate: max,
                final_solve_rate: fin,
                ddr_aggregate: agg,
                updates,
                env_steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let axes: Vec<String> = spec.axes.iter().map(|(k, _)| k.clone()).collect();
    write_summary(&out_dir.join(SUMMARY_FILE), &axes, &rows)?;
    Ok(rows)
}
