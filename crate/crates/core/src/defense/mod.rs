//! Classifier pretraining and the competitive mixture-of-generators
//! training: identity initialization, clone-and-perturb initialization,
//! winner-take-all generator updates and discriminator updates.

mod competitive;
mod config;
mod ensemble;
mod init;
mod pretrain;
mod train;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::data::DataError;
use crate::nn::{CheckpointError, NnError};

pub use competitive::{competitive_step, discriminator_objective, select_winner, StepReport};
pub use config::{TrainConfig, WinnerMode};
pub use ensemble::{assemble_ensemble, EnsembleState};
pub use init::{faster_init, identity_init, zero_random_weights};
pub use pretrain::{accuracy, pretrain_classifier, PretrainReport};
pub use train::{
    train_defense, train_separate_then_combine, write_log_csv, AttackSource, LogRecord, TrainEvent, TrainHooks,
};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged in {stage} (epoch {epoch}, step {step}): {detail}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}

impl DefenseError {
    /// Numeric failures (as opposed to bad input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            DefenseError::Divergence { .. } | DefenseError::Nn(NnError::NonFiniteGradient(_)) | DefenseError::Attack(AttackError::NonFiniteGradient(_))
        )
    }
}
