//! Loss, optimizer, metrics and the training loop.

pub mod adam;
pub mod loss;
pub mod metrics;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{cross_entropy, softmax_cross_entropy_grad};
pub use metrics::{categorical_accuracy, topk_accuracy};
pub use train::{
    evaluate_accuracy, evaluate_set, train, train_on, EpochRecord, TrainError, TrainingConfig, TrainingHistory,
    TrainingSet,
};
