//! Adadelta, the warmup/step schedule, checkpoints and the training loop.

mod checkpoint;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, MAGIC, OPT_PREFIX, TRAINER_PREFIX, VERSION};
pub use optim::Adadelta;
pub use schedule::Schedule;
pub use trainer::{
    check_labels, evaluate, load_params, predict_dataset, read_metrics, MetricsRow, RunOptions, Sampler,
    TrainConfig, TrainOutcome, Trainer, LATEST_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};
