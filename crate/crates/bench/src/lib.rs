//! Training protocol, synthetic graph tasks, metrics and experiment
//! harness for the graph Transformer variants.

pub mod config;
pub mod error;
pub mod inspect;
pub mod metrics;
pub mod optim;
pub mod results;
pub mod runner;
pub mod sweep;
pub mod tasks;

pub use config::{ExperimentConfig, Preset, TaskLevel, TaskName, TrainConfig};
pub use error::{BenchError, Result};
pub use metrics::{LossKind, MetricKind};
pub use optim::{lr_at, AdamConfig, TrainState};
pub use results::ResultRecord;
pub use runner::{run_experiment, RunOutput};
pub use tasks::{gen_task, Split};
