//! Training objective, pretraining and prior initialization, the alternating
//! coupling/gradient loop, and checkpoints.

mod config;
mod model;
mod train;

pub use config::{beta_schedule, total_loss, TrainConfig, Variant};
pub use model::{checkpoint_load, checkpoint_save, ModelParams, CHECKPOINT_VERSION};
pub use train::{
    architectures, pretrain_and_init, solve_coupling, train, train_from, train_step,
    validation_protocol, EpochRecord, PretrainEpoch, StepLosses, TrainLog,
};
