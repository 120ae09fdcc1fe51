//! Multitask loss, metrics, Adam, the training loop and the
//! hyperparameter sweep.

mod fit;
mod metrics;
mod optim;
mod sweep;

pub use fit::{dataset_loss, evaluate, predict_samples, train, train_step, train_with, TrainConfig, TrainHistory, EVAL_BATCH};
pub use metrics::{metrics, multitask_loss, series_metrics, wmape_termwise, Metrics, MetricsReport, MetricsRow};
pub use optim::{Adam, AdamConfig};
pub use sweep::{
    sweep, sweep_sequential, train_point, Selection, SweepAxis, SweepOutcome, SweepPoint, SweepSpec, Trial, TrialRecord,
    TrialStatus,
};
