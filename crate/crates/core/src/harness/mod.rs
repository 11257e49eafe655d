//! Experiment plumbing: configuration, scaling schedules, training runs,
//! checkpoints, sweeps and plots.

pub mod checkpoint;
pub mod config;
pub mod log;
pub mod plot;
pub mod schedule;
pub mod sweep;
pub mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{StrategyKind, TaskKind, TrainConfig, KEYS};
pub use log::{read_csv, CSV_HEADER};
pub use schedule::{derive_schedule, ScalingStrategy, Schedule};
pub use sweep::{read_summary, summarize_run, sweep, SummaryRow, SweepSpec};
pub use train::{evaluate_checkpoint, load_run, resume, run_dir_of, train, ResumeOverrides, RunSummary};
