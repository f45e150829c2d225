//! Losses, optimizer, training loop, checkpoints and gradient checking.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod rmsprop;
pub mod sweep;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{LossConfig, TrainConfig};
pub use gradcheck::{gradient_check, GradCheckReport, GroupError};
pub use loss::{loss_sqr, loss_stm, loss_stm_basic, total_loss};
pub use rmsprop::RmsProp;
pub use sweep::{sweep_configs, SweepParam};
pub use trainer::{train, write_log, EpochRecord, LogWriter, TrainOutcome};
