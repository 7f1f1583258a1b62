//! Federated training: tasks, data partitioning, local SGD with per-device
//! learning-rate scaling, aggregation and the round loop.

pub mod data;
pub mod task;
pub mod train;

pub use data::{gaussian_mixture, partition_dataset, partition_indices, Dataset, MixtureSpec, PartitionMode};
pub use task::{Logistic, Mlp, Quadratic, Task, TaskKind};
pub use train::{
    adjusted_lr, aggregate, AggregationWeights, evaluate, local_sgd, run_training, select_tau_bar, Federation, MinibatchSampler,
    RoundRecord, TauBarStrategy, TrainingConfig, TrainingRun,
};
