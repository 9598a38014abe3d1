//! Training for both checkpoint families (plain flow matching and
//! prefix-conditioned), delay-distribution sampling, and checkpoint
//! persistence.

mod checkpoint;
mod delay;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMeta};
pub use delay::{sample_delay, DelayDistribution};
pub use train::{eval_loss, train, TrainConfig, TrainOutput};
