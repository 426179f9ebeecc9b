use std::path::Path;

use serde_json::{json, Value};

use super::{DefenseError, TrainConfig};
use crate::attacks::AttackSpec;
use crate::data::{RngStreams, Stream};
use crate::models::{build_initialized, NetworkModel, Role};
use crate::nn::{AdamConfig, AdamState, CheckpointError};

/// Generators, the shared discriminator, one optimizer per model, and the
/// attack roster they are trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub generators: Vec<NetworkModel>,
    pub discriminator: NetworkModel,
    pub generator_opts: Vec<AdamState>,
    pub discriminator_opt: AdamState,
    pub epoch: usize,
    pub roster: Vec<AttackSpec>,
    /// How each generator came to be (e.g. "identity", "faster_init").
    pub provenance: Vec<String>,
}

fn generator_file(j: usize) -> String {
    format!("generator_{j:02}.mgad")
}

const DISCRIMINATOR_FILE: &str = "discriminator.mgad";

impl EnsembleState {
    /// Freshly initialized models: generator `j` draws from init substream
    /// `j + 1`, the discriminator from substream 0.
    pub fn new(config: &TrainConfig, roster: Vec<AttackSpec>, streams: &RngStreams) -> Result<Self, DefenseError> {
        config.validate()?;
        let role = if config.large_generator { Role::LargeGenerator } else { Role::Generator };
        let adam = AdamConfig::with_lr(config.lr);
        let generators: Vec<NetworkModel> = (0..config.generators)
            .map(|j| build_initialized(role, &mut streams.indexed(Stream::Init, j as u64 + 1)))
            .collect();
        let discriminator = build_initialized(Role::Discriminator, &mut streams.indexed(Stream::Init, 0));
        Ok(Self {
            generator_opts: generators.iter().map(|g| AdamState::new(g.params(), adam)).collect(),
            discriminator_opt: AdamState::new(discriminator.params(), adam),
            provenance: vec!["random".into(); generators.len()],
            generators,
            discriminator,
            epoch: 0,
            roster,
        })
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Checksums of every generator's parameters, in order.
    pub fn generator_checksums(&self) -> Vec<String> {
        self.generators.iter().map(|g| g.params().checksum()).collect()
    }

    /// Writes one checkpoint per model into `dir`. `extra` (an object) is
    /// merged into every file's metadata.
    pub fn save(&self, dir: impl AsRef<Path>, extra: &Value) -> Result<Vec<std::path::PathBuf>, DefenseError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let base = |index: Option<usize>| {
            let mut m = extra.as_object().cloned().unwrap_or_default();
            m.insert("epoch".into(), json!(self.epoch));
            m.insert("roster".into(), json!(self.roster));
            m.insert("generators".into(), json!(self.generators.len()));
            if let Some(j) = index {
                m.insert("index".into(), json!(j));
                m.insert("provenance".into(), json!(self.provenance[j]));
            }
            Value::Object(m)
        };
        let mut written = Vec::new();
        for (j, (g, opt)) in self.generators.iter().zip(&self.generator_opts).enumerate() {
            let path = dir.join(generator_file(j));
            g.save(&path, Some(opt), base(Some(j)))?;
            written.push(path);
        }
        let path = dir.join(DISCRIMINATOR_FILE);
        self.discriminator.save(&path, Some(&self.discriminator_opt), base(None))?;
        written.push(path);
        Ok(written)
    }

    /// Reads an ensemble written by [`EnsembleState::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DefenseError> {
        let dir = dir.as_ref();
        let (discriminator, d_opt, meta) = NetworkModel::load(dir.join(DISCRIMINATOR_FILE))?;
        let n = meta.get("generators").and_then(Value::as_u64).unwrap_or(0) as usize;
        let roster: Vec<AttackSpec> = serde_json::from_value(meta.get("roster").cloned().unwrap_or(json!([])))
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let epoch = meta.get("epoch").and_then(Value::as_u64).unwrap_or(0) as usize;
        let mut generators = Vec::with_capacity(n);
        let mut opts = Vec::with_capacity(n);
        let mut provenance = Vec::with_capacity(n);
        for j in 0..n {
            let (g, opt, m) = NetworkModel::load(dir.join(generator_file(j)))?;
            let adam = AdamConfig::default();
            opts.push(opt.unwrap_or_else(|| AdamState::new(g.params(), adam)));
            provenance.push(m.get("provenance").and_then(Value::as_str).unwrap_or("unknown").to_string());
            generators.push(g);
        }
        let ens = assemble_ensemble(generators, discriminator, roster)?;
        Ok(Self {
            generator_opts: opts,
            discriminator_opt: d_opt.unwrap_or_else(|| AdamState::new(ens.discriminator.params(), AdamConfig::default())),
            provenance,
            epoch,
            ..ens
        })
    }
}

/// Builds an ensemble from existing models without training, with fresh
/// optimizer states.
pub fn assemble_ensemble(
    generators: Vec<NetworkModel>,
    discriminator: NetworkModel,
    roster: Vec<AttackSpec>,
) -> Result<EnsembleState, DefenseError> {
    if generators.is_empty() {
        return Err(DefenseError::Architecture("no generators".into()));
    }
    if discriminator.role != Role::Discriminator {
        return Err(DefenseError::Architecture(format!("expected a discriminator, got {}", discriminator.role)));
    }
    let first = &generators[0];
    for (j, g) in generators.iter().enumerate() {
        if !g.role.is_generator() || g.layers() != first.layers() {
            return Err(DefenseError::Architecture(format!("generator {j} ({}) differs from generator 0 ({})", g.role, first.role)));
        }
    }
    let adam = AdamConfig::default();
    Ok(EnsembleState {
        generator_opts: generators.iter().map(|g| AdamState::new(g.params(), adam)).collect(),
        discriminator_opt: AdamState::new(discriminator.params(), adam),
        provenance: vec!["assembled".into(); generators.len()],
        generators,
        discriminator,
        epoch: 0,
        roster,
    })
}
