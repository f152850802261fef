//! Simulation-error cost and Levenberg-Marquardt training.

mod lm;
mod train;

pub use lm::{
    minimize, DampedSubspace, EpochRecord, LeastSquaresProblem, LmOptions, LmResult, StepRecord, StopReason,
};
pub use train::{cost, lm_train, TrainOptions, TrainReport};
