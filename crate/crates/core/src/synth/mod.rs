//! Synthetic teacher/student ranking benchmark with a linear student.

mod compare;
mod data;
mod train;

pub use compare::{compare_losses, CellResult, ComparisonTable, COMPARE_HEADER};
pub use data::{generate_dataset, SynthConfig, SynthDataset, SynthQuery};
pub use train::{
    batch_loss_and_grad, evaluate, train, EpochRecord, StepRecord, StudentModel, TrainConfig,
    TrainRunLog, WarmupConfig, TRAINLOG_HEADER,
};
