//! Rollouts, the training loop, evaluation, checkpoints, metrics and run comparison.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod probe;
pub mod report;
pub mod rollout;
pub mod sidecar;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use compare::{compare_runs, compare_series, Comparison, RunSummary};
pub use config::{Method, ModelConfig, SamplingConfig, TrainConfig};
pub use eval::{evaluate, EvalResult};
pub use metrics::{log_metrics, read_metrics, MetricsRecord};
pub use probe::{probe_queries, write_probe_outputs, ProbeRecord};
pub use report::write_report;
pub use rollout::{run_batch, run_group, Rollout, RolloutContext};
pub use sidecar::{sidecar_advantages, sidecar_files, SidecarRecord};
pub use train::{train_run, train_to_dir, TrainOutput, TrainSummary, Trainer};
