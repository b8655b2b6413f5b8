//! Losses, proposal labeling, hard example mining, SGD and the training loop.

pub mod labels;
pub mod loss;
pub mod proposals;
pub mod sgd;
pub mod trainer;

pub use labels::{assign_labels, ohem_select, LabeledRoI};
pub use loss::{cross_entropy, smooth_l1};
pub use proposals::{propose, ProposalConfig};
pub use sgd::{sgd_step, SgdConfig, SgdState};
pub use trainer::{
    frozen_batch_loss, loss_log_csv, smoothed_losses, train, train_with, training_rois, BatchLoss, FrozenImage,
    LossRecord, TrainOutcome, Trainer, LOSS_LOG_HEADER,
};
