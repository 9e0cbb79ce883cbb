//! Candidate scoring network, losses and training.

pub mod gradcheck;
mod loss;
mod model;
mod network;
pub mod ops;
mod optim;
mod train;

pub use loss::{softmax, softmax_regression_loss, two_class_loss, LossKind};
pub use model::{group_input, select_best, Model, ModelFeatures, ModelHeader, Prediction, MODEL_MAGIC, MODEL_VERSION};
pub use network::{param_count, Forward, GroupInput, Network, NetworkConfig, ParamEntry};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};
pub use train::{evaluate, fit_normalization, prediction_ccr, train, EpochRecord, History, TrainConfig};
