//! Meta-training: Adam, the plateau learning-rate schedule, episodic
//! training and evaluation loops, checkpoints, and the metrics log.

mod adam;
mod checkpoint;
mod eval;
mod metrics;
mod plateau;
mod trainer;

pub use adam::{Adam, AdamOutcome};
pub use checkpoint::{
    apply_checkpoint, load_checkpoint, model_from_checkpoint, save_checkpoint, CheckpointError,
};
pub use eval::{evaluate, EvalReport};
pub use metrics::{read_metrics, MetricsError, MetricsRecord, MetricsWriter};
pub use plateau::PlateauSchedule;
pub use trainer::{meta_train, test_protocol, train_step, TrainError, TrainOutcome, TrainSettings};
