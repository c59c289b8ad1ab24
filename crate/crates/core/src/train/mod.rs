//! Replay-driven joint optimization of the agent, mixer, coordinator, and
//! posterior networks.

pub mod loss;
pub mod replay;
pub mod rollout;
pub mod trainer;

use thiserror::Error;

use crate::env::EnvError;
use crate::instruction::InstructionError;
use crate::model::ModelError;
use crate::nn::NnError;

pub use loss::{build_losses, ce_loss, latent_pass, rl_loss, td_target, td_targets, LossConfig, Losses, TdTargets};
pub use replay::{EpisodeRecord, ReplayBuffer, TrainBatch};
pub use rollout::{collect_episode, random_walk_instructions, standard_normal};
pub use trainer::{train_to_dir, EpisodeSummary, MetricsRow, TrainConfig, TrainOutput, Trainer, UpdateStats};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("training diverged at update {update}: loss_rl={loss_rl}, loss_ce={loss_ce:?}")]
    Diverged {
        update: u64,
        loss_rl: f64,
        loss_ce: Option<f64>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Instruction(#[from] InstructionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
