//! Minimal reverse-mode differentiable core for sequential networks:
//! tensors, layers, losses, Adam, gradient checking and checkpoints.
//!
//! A forward pass either runs purely ([`Network::forward`]) or records a
//! [`Tape`] ([`Network::forward_tape`]) that [`Network::backward`] replays in
//! reverse. Forward passes never mutate the network; train-mode batch
//! statistics are folded into the running statistics only through
//! [`Network::commit_batch_stats`] (or [`Network::forward_train`]).

mod adam;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod layers;
pub mod loss;
mod network;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use layers::{sigmoid, Layer, Mode, BN_EPS, BN_MOMENTUM};
pub use network::{BackwardOutput, GradRequest, Network, Tape};
pub use params::{Gradients, Param, ParameterSet};
pub use tensor::{argmax, argmax_rows, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("layer '{layer}': expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("duplicate parameter '{0}'")]
    DuplicateParam(String),
    #[error("parameter layout mismatch: {0}")]
    ParamLayout(String),
    #[error("backward called without a recorded forward pass")]
    NoRecordedForward,
    #[error("tape entry does not match layer '{0}'")]
    TapeMismatch(String),
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
}

/// Sum of element counts over the (trainable) tensors of `params`.
pub fn param_count(params: &ParameterSet, trainable_only: bool) -> usize {
    params.param_count(trainable_only)
}
