//! Losses, Adam, the step-decay schedule and the epoch loop.

mod adam;
mod config;
mod loss;
mod trainer;

pub use adam::{adam_step, AdamParams, AdamState};
pub use config::{lr_at, TrainConfig};
pub use loss::{combined_loss, rmse, rmse_loss, smooth_l1, smooth_l1_loss, LossVars};
pub use trainer::{
    batch_gradients, evaluate_loss, train, BatchLoss, Control, EpochReport, SplitLoss,
    TrainOutcome, METRICS_HEADER,
};
