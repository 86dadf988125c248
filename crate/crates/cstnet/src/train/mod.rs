//! Training engine: experiment configuration, SGD with momentum, the
//! train/eval loops, metrics, checkpointing, and the finite-difference
//! gradient checker.

mod checkpoint;
mod config;
mod gradcheck;
mod harness;
mod metrics;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use gradcheck::{
    grad_check, relative_error, CheckTarget, GradCheckReport, LayerKind, DEFAULT_EPSILON,
    DEFAULT_PROBES, DEFAULT_TOLERANCE,
};
pub use harness::{
    build_model, compare_variants, evaluate, format_summary_csv, summarize, train_model,
    CompareOutcome, SummaryRow, TrainOutcome, DIVERGENCE_LOSS_LIMIT, SUMMARY_ACC_THRESHOLD,
};
pub use metrics::{format_metrics_csv, write_metrics_csv, EpochMetrics, Split};
pub use sgd::{sgd_step, Sgd};
