//! Episodic environment over the solver and DDPG training of the learned
//! policy.

mod config;
mod ddpg;
mod env;
mod replay;
mod train;

pub use ddpg::{polyak_update, Ddpg, DdpgConfig, UpdateStats};
pub use env::{EnvConfig, QpEnv, StepOutcome};
pub use config::TrainConfig;
pub use replay::{ReplayBuffer, ReplayRecord, Transition};
pub use train::{
    env_config, eval_spec, evaluate_actor, load_actor, load_actor_named, log_csv, net_config, train_spec, LogRow, Trainer, BEST_ACTOR, CHECKPOINT_KIND,
    LOG_HEADER,
};

use thiserror::Error;

use crate::admm::AdmmError;
use crate::nn::NnError;
use crate::policy::PolicyError;
use crate::probgen::GenError;
use crate::qp::QpError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("episode already finished; call reset")]
    EpisodeFinished,
    #[error("environment has not been reset")]
    NotReset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical failure on problem seed {seed}: {message}")]
    Numerical { seed: u64, message: String },
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("io: {0}")]
    Io(String),
}
