//! Strategy orchestration: optimizer and schedule, contrastive sampling,
//! the momentum encoder, checkpoints, and the training loop.

mod checkpoint;
mod config;
mod moco;
mod optim;
mod pclr;
mod train;

pub use checkpoint::{Checkpoint, EpochRecord, CHECKPOINT_VERSION};
pub use config::{ScratchMode, StrategyConfig, StrategyKind};
pub use moco::{momentum_update, momentum_update_params, MocoQueue, UNIT_NORM_TOL};
pub use optim::{adam_step, one_cycle_lr, AdamConfig, AdamState, ONE_CYCLE_DIV, ONE_CYCLE_FINAL_DIV, ONE_CYCLE_WARMUP};
pub use pclr::{sample_pclr_batch, PatientIndex, PclrPair};
pub use train::{pretrain, pretrain_with_progress, untrained};
