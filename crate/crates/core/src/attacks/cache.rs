use std::path::Path;

use serde_json::{json, Value};

use super::{AttackResult, AttackSpec};
use crate::nn::{Checkpoint, CheckpointError, Tensor};

/// A stored attacked dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackCache {
    pub spec: AttackSpec,
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub success: Vec<bool>,
}

fn flags(v: impl IntoIterator<Item = f32>, len: usize, name: &str) -> Result<Tensor, CheckpointError> {
    Tensor::new(vec![len], v.into_iter().collect()).map_err(|_| CheckpointError::InvalidTensor(name.into()))
}

/// Writes adversarial images with their labels and success flags.
pub fn save_attack_cache(path: impl AsRef<Path>, spec: &AttackSpec, result: &AttackResult, labels: &[u8]) -> Result<(), CheckpointError> {
    let n = labels.len();
    let ckpt = Checkpoint {
        tensors: vec![
            ("images".into(), result.adversarial.clone()),
            ("labels".into(), flags(labels.iter().map(|&l| l as f32), n, "labels")?),
            ("success".into(), flags(result.success.iter().map(|&s| s as u8 as f32), n, "success")?),
        ],
        metadata: json!({ "role": "attack_cache", "attack": spec }),
    };
    ckpt.save(path)
}

pub fn load_attack_cache(path: impl AsRef<Path>) -> Result<AttackCache, CheckpointError> {
    let ckpt = Checkpoint::load(path)?;
    let spec: AttackSpec = serde_json::from_value(ckpt.metadata.get("attack").cloned().unwrap_or(Value::Null))
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let get = |name: &str| {
        ckpt.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| CheckpointError::Missing(name.into()))
    };
    let images = get("images")?;
    let labels = get("labels")?.data().iter().map(|&v| v as u8).collect();
    let success = get("success")?.data().iter().map(|&v| v != 0.0).collect();
    Ok(AttackCache {
        spec,
        images,
        labels,
        success,
    })
}
