//! The four architectures: generator, discriminator, classifier and the
//! large generator.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde_json::{json, Value};

use crate::nn::{AdamState, Checkpoint, CheckpointError, Layer, Network};

pub const IMAGE_SHAPE: [usize; 3] = [1, 28, 28];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Generator,
    Discriminator,
    Classifier,
    LargeGenerator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
            Role::Classifier => "classifier",
            Role::LargeGenerator => "large_generator",
        }
    }

    /// Whether the network maps images to images.
    pub fn is_generator(self) -> bool {
        matches!(self, Role::Generator | Role::LargeGenerator)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "generator" => Ok(Role::Generator),
            "discriminator" => Ok(Role::Discriminator),
            "classifier" => Ok(Role::Classifier),
            "large_generator" => Ok(Role::LargeGenerator),
            _ => Err(format!("unknown model role '{s}'")),
        }
    }
}

/// A network tagged with the part it plays.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub role: Role,
    pub net: Network,
}

impl Deref for NetworkModel {
    type Target = Network;

    fn deref(&self) -> &Network {
        &self.net
    }
}

impl DerefMut for NetworkModel {
    fn deref_mut(&mut self) -> &mut Network {
        &mut self.net
    }
}

fn conv(name: &str, in_ch: usize, out_ch: usize, kernel: usize, padding: usize) -> Layer {
    Layer::Conv2d {
        name: name.into(),
        in_ch,
        out_ch,
        kernel,
        padding,
    }
}

fn bn(name: &str, channels: usize) -> Layer {
    Layer::BatchNorm2d {
        name: name.into(),
        channels,
    }
}

fn dense(name: &str, in_features: usize, out_features: usize) -> Layer {
    Layer::Dense {
        name: name.into(),
        in_features,
        out_features,
    }
}

/// Conv3×3 ladder where every hidden conv is followed by ELU then BN and the
/// last conv by a sigmoid.
fn generator_ladder(channels: &[usize]) -> Vec<Layer> {
    let mut layers = Vec::new();
    let last = channels.len() - 2;
    for (i, w) in channels.windows(2).enumerate() {
        layers.push(conv(&format!("conv{}", i + 1), w[0], w[1], 3, 1));
        if i < last {
            layers.push(Layer::Elu);
            layers.push(bn(&format!("bn{}", i + 1), w[1]));
        } else {
            layers.push(Layer::Sigmoid);
        }
    }
    layers
}

fn model(role: Role, layers: Vec<Layer>) -> NetworkModel {
    let net = Network::new(layers, IMAGE_SHAPE.to_vec()).expect("fixed architecture is consistent");
    NetworkModel { role, net }
}

pub fn build_generator() -> NetworkModel {
    model(Role::Generator, generator_ladder(&[1, 32, 32, 32, 32, 1]))
}

pub fn build_large_generator() -> NetworkModel {
    model(Role::LargeGenerator, generator_ladder(&[1, 32, 64, 128, 128, 64, 32, 1]))
}

pub fn build_discriminator() -> NetworkModel {
    let mut layers = Vec::new();
    let mut in_ch = 1;
    let mut k = 1;
    for (reps, ch) in [(3, 16), (2, 32), (2, 64)] {
        for _ in 0..reps {
            layers.push(conv(&format!("conv{k}"), in_ch, ch, 3, 1));
            layers.push(Layer::Elu);
            in_ch = ch;
            k += 1;
        }
        layers.push(Layer::AvgPool2);
    }
    layers.extend([
        Layer::Flatten,
        dense("fc1", 64 * 3 * 3, 1024),
        Layer::Elu,
        dense("fc2", 1024, 1),
        Layer::Sigmoid,
    ]);
    model(Role::Discriminator, layers)
}

pub fn build_classifier() -> NetworkModel {
    model(
        Role::Classifier,
        vec![
            conv("conv1", 1, 6, 5, 2),
            Layer::Relu,
            Layer::MaxPool2,
            conv("conv2", 6, 16, 5, 0),
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Flatten,
            dense("fc1", 400, 120),
            Layer::Relu,
            dense("fc2", 120, 84),
            Layer::Relu,
            dense("fc3", 84, 10),
        ],
    )
}

pub fn build(role: Role) -> NetworkModel {
    match role {
        Role::Generator => build_generator(),
        Role::Discriminator => build_discriminator(),
        Role::Classifier => build_classifier(),
        Role::LargeGenerator => build_large_generator(),
    }
}

/// Builds and initializes a model from `rng`.
pub fn build_initialized<R: Rng>(role: Role, rng: &mut R) -> NetworkModel {
    let mut m = build(role);
    m.net.init_uniform(rng);
    m
}

impl NetworkModel {
    /// Packs the model into a checkpoint; `metadata` (an object or null) is
    /// extended with the role.
    pub fn to_checkpoint(&self, optimizer: Option<&AdamState>, metadata: Value) -> Checkpoint {
        let mut meta = match metadata {
            Value::Object(m) => m,
            _ => Default::default(),
        };
        meta.insert("role".into(), json!(self.role.as_str()));
        Checkpoint::from_parts(self.net.params(), optimizer, Value::Object(meta))
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<(NetworkModel, Option<AdamState>, Value), CheckpointError> {
        let role: Role = ckpt
            .metadata
            .get("role")
            .and_then(Value::as_str)
            .ok_or_else(|| CheckpointError::Metadata("missing role".into()))?
            .parse()
            .map_err(CheckpointError::Metadata)?;
        let (params, opt, meta) = ckpt.into_parts()?;
        let mut m = build(role);
        m.net
            .set_params(params)
            .map_err(|e| CheckpointError::Metadata(format!("{role} layout: {e}")))?;
        Ok((m, opt, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, optimizer: Option<&AdamState>, metadata: Value) -> Result<(), CheckpointError> {
        self.to_checkpoint(optimizer, metadata).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(NetworkModel, Option<AdamState>, Value), CheckpointError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
