//! Alternating multi-task training, cross-validation and evaluation.

mod checkpoint;
mod config;
mod cv;
mod epoch;
mod metrics;
mod sampling;

pub use checkpoint::{load_json, save_json, Checkpoint, TrainingState, CHECKPOINT_FORMAT};
pub use config::TrainerConfig;
pub use cv::{
    evaluate_task, predict_all, prepare_folds, run_cross_validation, run_fold, run_folds, BestSnapshot, EvalResult,
    EvalRow, FoldData, FoldOutcome, FoldState, TaskSummary,
};
pub use epoch::{train_epoch, EpochData, EpochSummary, TaskExamples, TaskLoss};
pub use metrics::{auroc, mean_std, MetricRecord, Split};
pub use sampling::{compute_sampling_rates, sample_task, TaskSampler};
