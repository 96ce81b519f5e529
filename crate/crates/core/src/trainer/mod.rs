//! Cross-entropy loss, momentum SGD and the training loop.

mod loss;
mod sgd;
mod train;

pub use loss::{bce_loss, check_bce, LossNormalization, LossValue};
pub use sgd::sgd_step;
pub use train::{
    binarize, evaluate, load_samples, train, EvalRecord, Sample, StepRecord, StopTarget,
    TrainConfig, TrainHistory,
};
