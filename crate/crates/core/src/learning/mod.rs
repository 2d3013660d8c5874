//! Projection head, prototype losses and the training loop.

pub mod checkpoint;
pub mod head;
pub mod losses;
pub mod train;

pub use checkpoint::{load_checkpoint, loss_trace_tsv, save_checkpoint};
pub use head::{HeadGrad, ProjectionHead};
pub use losses::{ce_loss, pl_loss, reg_loss, semantic_weights, soft_prototype_loss, spl_loss, LossGrad};
pub use train::{ema_update, total_loss, train, Batch, LossBreakdown, Objective, TrainState};
