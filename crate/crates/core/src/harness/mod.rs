//! Experiment plumbing: synthetic tasks, configuration, the training loop,
//! metrics and energy accounting, the STDP probe, checkpoints, and the
//! verification suites.

pub mod checkpoint;
pub mod config;
pub mod energy;
pub mod metrics;
pub mod probe;
pub mod task;
pub mod train;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use energy::{energy_report, EnergyReport};
pub use metrics::{CsvSink, MetricsRecord, MetricsSink};
pub use probe::{fit_exponential, fit_window, probe_stdp_window, ExpFit};
pub use task::{gen_episode, Episode, TaskKind, TaskSpec};
pub use train::{resume_online, train_online, TrainOutcome, Trainer};
