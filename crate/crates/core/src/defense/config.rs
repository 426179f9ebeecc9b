use serde::{Deserialize, Serialize};

use super::DefenseError;

/// How the winning generator is chosen during competitive training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinnerMode {
    /// One winner per batch by mean discriminator score.
    Batch,
    /// Each example goes to its own highest-scoring generator; every
    /// generator that wins something is updated on its examples.
    Example,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub generators: usize,
    pub init_epochs: usize,
    pub train_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub faster_init: bool,
    pub perturb_fraction: f64,
    pub seed: u64,
    pub large_generator: bool,
    pub winner_mode: WinnerMode,
    /// Save an ensemble checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Attack the whole transformed half once per roster entry instead of
    /// attacking every batch afresh.
    pub precompute_attacks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            generators: 1,
            init_epochs: 10,
            train_epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            faster_init: false,
            perturb_fraction: 0.05,
            seed: 0,
            large_generator: false,
            winner_mode: WinnerMode::Batch,
            checkpoint_every: 10,
            precompute_attacks: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DefenseError> {
        let bad = |m: &str| Err(DefenseError::Config(m.into()));
        if self.generators == 0 {
            return bad("at least one generator is required");
        }
        if self.large_generator && self.generators != 1 {
            return bad("the large generator runs alone (generators = 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.perturb_fraction) {
            return bad("perturb fraction must lie in [0, 1)");
        }
        Ok(())
    }
}
