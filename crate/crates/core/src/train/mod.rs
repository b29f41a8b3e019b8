//! Loss functions, Adam, the training loop and checkpoints.

mod adam;
mod checkpoint;
mod fit;
mod loss;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState, Moments};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use fit::{
    fit, fit_with, mean_psnr, train_step, EpochRecord, FitHooks, PlateauSchedule, TrainConfig, TrainLog,
    TrainOutcome,
};
pub use loss::{loss, loss_with, FeatureLoss, LossValue, HUBER_DELTA};
