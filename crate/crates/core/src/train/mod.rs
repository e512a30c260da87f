//! Optimisation: flat-file config, Adam, cosine schedule, checkpoints and the
//! training loop.

mod checkpoint;
mod config;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Schedule, TrainConfig};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use trainer::{run, RunOutcome, StepReport, Trainer, LAST_BATCH, LOSS_LOG};
