//! Experiment orchestration: datasets, configuration, teacher training,
//! student distillation, evaluation and metrics logging.

mod config;
mod data;
mod metrics;
mod train;

pub use config::{
    AnalysisConfig, DataSource, ExperimentConfig, InstanceLoss, LossMode, NetworkConfig,
    OptimizerConfig,
};
pub use data::{gen_synthetic, load_dataset, write_dataset_csv, Dataset, Split, SyntheticSpec};
pub use metrics::{EpochMetrics, MetricsRecord};
pub use train::{
    derive_seed, distill_student, distill_student_with, evaluate, heldout_cc, student_objective,
    train_teacher, Accuracy, BatchEvent, Experiment, LossSetup, Objective, TrainOutcome,
};
