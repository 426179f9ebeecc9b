use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, ParameterSet, Tensor};

/// Hyperparameters of the optimizer; learning rate is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First and second moment estimates for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let moments = params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(name, p)| {
                (
                    name.to_string(),
                    (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())),
                )
            })
            .collect();
        Self { config, step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.moments.iter().map(|(k, (m, v))| (k.as_str(), m, v))
    }

    /// Rebuilds a state from stored moments (checkpoint loading).
    pub fn from_parts(config: AdamConfig, step: u64, moments: Vec<(String, Tensor, Tensor)>) -> Self {
        Self {
            config,
            step,
            moments: moments.into_iter().map(|(k, m, v)| (k, (m, v))).collect(),
        }
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// left alone; any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<(), NnError> {
        for (name, g) in grads.iter() {
            if g.has_nan() {
                return Err(NnError::NonFiniteGradient(name.to_string()));
            }
            let (m, _) = self
                .moments
                .get(name)
                .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
            if m.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    layer: name.to_string(),
                    expected: m.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (beta1 as f64).powi(t);
        let bc2 = 1.0 - (beta2 as f64).powi(t);
        for (name, g) in grads.iter() {
            let (m, v) = self.moments.get_mut(name).expect("checked above");
            let p = params.tensor_mut(name)?;
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv as f64 / bc1;
                let vhat = *vv as f64 / bc2;
                *pv = (*pv as f64 - lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
            }
        }
        Ok(())
    }
}
