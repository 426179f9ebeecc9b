use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::{json, Value};

use super::competitive::competitive_step;
use super::init::{faster_init, identity_init};
use super::{assemble_ensemble, DefenseError, EnsembleState, StepReport, TrainConfig};
use crate::attacks::{apply_attack, AttackKind, AttackSpec};
use crate::data::{batch_iter, Dataset, RngStreams, SplitPair};
use crate::nn::{argmax_rows, Mode, Network, NnError, Tensor};

/// Produces attacked batches for defense training. Attacks are white-box
/// against the classifier and use its own predictions on the clean batch
/// as reference labels, so no dataset labels are involved.
pub struct AttackSource<'a> {
    classifier: &'a Network,
    roster: &'a [AttackSpec],
    streams: RngStreams,
    precomputed: Option<Vec<Tensor>>,
}

impl<'a> AttackSource<'a> {
    pub fn new(classifier: &'a Network, roster: &'a [AttackSpec], streams: RngStreams) -> Self {
        Self {
            classifier,
            roster,
            streams,
            precomputed: None,
        }
    }

    pub fn roster(&self) -> &[AttackSpec] {
        self.roster
    }

    /// Classifier predictions used as attack reference labels.
    pub fn pseudo_labels(&self, images: &Tensor) -> Result<Vec<u8>, DefenseError> {
        Ok(argmax_rows(&self.classifier.forward(images, Mode::Eval)?)
            .into_iter()
            .map(|p| p as u8)
            .collect())
    }

    /// Attacks all of `data` with roster entry `r`, in batches with one
    /// noise substream per batch. Returns the images, the reference labels
    /// and the success flags.
    pub fn attack_all(&self, data: &Dataset, r: usize, batch_size: usize) -> Result<(Tensor, Vec<u8>, Vec<bool>), DefenseError> {
        let spec = &self.roster[r];
        let mut parts = Vec::new();
        let mut labels = Vec::with_capacity(data.len());
        let mut success = Vec::with_capacity(data.len());
        for (b, start) in (0..data.len()).step_by(batch_size).enumerate() {
            let idx: Vec<usize> = (start..(start + batch_size).min(data.len())).collect();
            let x = data.images().select_rows(&idx);
            let y = self.pseudo_labels(&x)?;
            let mut rng = self.streams.derive(&format!("noise/precompute/{r}"), b as u64);
            let res = apply_attack(spec, self.classifier, &x, &y, &mut rng)?;
            labels.extend(&y);
            success.extend(res.success);
            parts.push(res.adversarial);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok((Tensor::concat_rows(&refs)?, labels, success))
    }

    /// Attacks the whole dataset once per roster entry; later draws reuse
    /// these images instead of attacking afresh.
    pub fn precompute(&mut self, data: &Dataset, batch_size: usize) -> Result<(), DefenseError> {
        let cached = (0..self.roster.len())
            .map(|r| self.attack_all(data, r, batch_size).map(|(x, _, _)| x))
            .collect::<Result<Vec<_>, _>>()?;
        self.precomputed = Some(cached);
        Ok(())
    }

    /// Picks an attack uniformly from the roster for this `(stage, step)` and
    /// returns its index and the attacked `images` (dataset rows `indices`).
    pub fn draw(&self, stage: &str, step: u64, images: &Tensor, indices: &[usize]) -> Result<(usize, Tensor), DefenseError> {
        let r = self
            .streams
            .derive(&format!("attack-select/{stage}"), step)
            .gen_range(0..self.roster.len());
        if let Some(cache) = &self.precomputed {
            return Ok((r, cache[r].select_rows(indices)));
        }
        let y = self.pseudo_labels(images)?;
        let mut rng = self.streams.derive(&format!("noise/{stage}"), step);
        Ok((r, apply_attack(&self.roster[r], self.classifier, images, &y, &mut rng)?.adversarial))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    pub attack: AttackKind,
    pub winner: usize,
    pub scores: Vec<f64>,
    pub loss_g: f64,
    pub loss_d: f64,
}

impl LogRecord {
    pub fn header(generators: usize) -> String {
        let scores: Vec<String> = (0..generators).map(|j| format!("score_g{j}")).collect();
        format!("epoch,step,attack_kind,winner_index,{},loss_g,loss_d", scores.join(","))
    }

    pub fn to_csv(&self) -> String {
        let scores: Vec<String> = self.scores.iter().map(|s| s.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.attack,
            self.winner,
            scores.join(","),
            self.loss_g,
            self.loss_d
        )
    }
}

pub fn write_log_csv(path: impl AsRef<Path>, generators: usize, records: &[LogRecord]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", LogRecord::header(generators))?;
    for r in records {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()
}

/// Progress notifications from [`train_defense`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    InitDone,
    Step { record: &'a LogRecord, report: &'a StepReport },
    EpochEnd { epoch: usize },
    Checkpoint { epoch: usize, dir: &'a Path },
}

/// Optional side outputs of [`train_defense`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Checkpoints go to `<dir>/epoch_NNN` and `<dir>/final`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Extra metadata stored with every checkpoint.
    pub metadata: Value,
    pub observer: Option<Box<dyn FnMut(&TrainEvent<'_>) + 'a>>,
}

impl TrainHooks<'_> {
    fn notify(&mut self, event: TrainEvent<'_>) {
        if let Some(f) = self.observer.as_mut() {
            f(&event);
        }
    }
}

fn with_context(e: DefenseError, epoch: usize, step: usize) -> DefenseError {
    match e {
        DefenseError::Divergence { stage, detail, .. } => DefenseError::Divergence { stage, epoch, step, detail },
        DefenseError::Nn(NnError::NonFiniteGradient(p)) => DefenseError::Divergence {
            stage: "competitive step",
            epoch,
            step,
            detail: format!("non-finite gradient for {p}"),
        },
        e => e,
    }
}

/// Identity (or clone-and-perturb) initialization followed by
/// `config.train_epochs` epochs of competitive training. Each step pairs a
/// shuffled batch of the transformed half (attacked on the fly) with a
/// shuffled batch of the canonical half.
pub fn train_defense(
    split: &SplitPair,
    classifier: &Network,
    roster: &[AttackSpec],
    config: &TrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<(EnsembleState, Vec<LogRecord>), DefenseError> {
    config.validate()?;
    if roster.is_empty() {
        return Err(DefenseError::Config("attack roster is empty".into()));
    }
    for spec in roster {
        spec.validate()?;
    }
    let streams = RngStreams::new(config.seed);
    let mut source = AttackSource::new(classifier, roster, streams);
    if config.precompute_attacks {
        source.precompute(&split.transformed_base, config.batch_size)?;
    }
    let mut ens = EnsembleState::new(config, roster.to_vec(), &streams)?;

    if config.faster_init {
        identity_init(
            &mut ens.generators[..1],
            &mut ens.generator_opts[..1],
            &split.transformed_base,
            &source,
            config.init_epochs,
            config.batch_size,
            &streams,
        )?;
        let copies = faster_init(&ens.generators[0], &ens.generator_opts[0], config.generators, config.perturb_fraction, &streams)?;
        let (gens, opts): (Vec<_>, Vec<_>) = copies.into_iter().unzip();
        ens.generators = gens;
        ens.generator_opts = opts;
        ens.provenance = vec![format!("faster_init(perturb={})", config.perturb_fraction); config.generators];
    } else {
        identity_init(
            &mut ens.generators,
            &mut ens.generator_opts,
            &split.transformed_base,
            &source,
            config.init_epochs,
            config.batch_size,
            &streams,
        )?;
        ens.provenance = vec!["identity_init".into(); config.generators];
    }
    hooks.notify(TrainEvent::InitDone);

    let mut meta = hooks.metadata.as_object().cloned().unwrap_or_default();
    meta.insert("seed".into(), json!(config.seed));
    meta.insert("config".into(), json!(config));
    let meta = Value::Object(meta);

    let mut log = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=config.train_epochs {
        let mut rng_t = streams.derive("shuffle/transformed", epoch as u64);
        let mut rng_c = streams.derive("shuffle/canonical", epoch as u64);
        let transformed = batch_iter(&split.transformed_base, config.batch_size, &mut rng_t)?;
        let canonical = batch_iter(&split.canonical, config.batch_size, &mut rng_c)?;
        for (tb, cb) in transformed.zip(canonical) {
            let (r, x_adv) = source
                .draw("train", step as u64, &tb.images, &tb.indices)
                .map_err(|e| with_context(e, epoch, step))?;
            let report = competitive_step(&mut ens, &cb.images, &x_adv, roster[r].kind, config.winner_mode)
                .map_err(|e| with_context(e, epoch, step))?;
            let record = LogRecord {
                epoch,
                step,
                attack: report.attack,
                winner: report.winner,
                scores: report.scores.clone(),
                loss_g: report.loss_g,
                loss_d: report.loss_d,
            };
            hooks.notify(TrainEvent::Step {
                record: &record,
                report: &report,
            });
            log.push(record);
            step += 1;
        }
        ens.epoch = epoch;
        hooks.notify(TrainEvent::EpochEnd { epoch });
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch != config.train_epochs {
            if let Some(dir) = hooks.checkpoint_dir.clone() {
                let dir = dir.join(format!("epoch_{epoch:03}"));
                ens.save(&dir, &meta)?;
                hooks.notify(TrainEvent::Checkpoint { epoch, dir: &dir });
            }
        }
    }
    if let Some(dir) = hooks.checkpoint_dir.clone() {
        let dir = dir.join("final");
        ens.save(&dir, &meta)?;
        hooks.notify(TrainEvent::Checkpoint { epoch: ens.epoch, dir: &dir });
    }
    Ok((ens, log))
}

/// Trains one single-generator ensemble per roster entry plus one joint
/// ensemble, then combines the single-attack generators with the joint
/// discriminator without further training.
pub fn train_separate_then_combine(
    split: &SplitPair,
    classifier: &Network,
    roster: &[AttackSpec],
    config: &TrainConfig,
) -> Result<EnsembleState, DefenseError> {
    let single = TrainConfig {
        generators: 1,
        checkpoint_every: 0,
        ..config.clone()
    };
    let mut generators = Vec::with_capacity(roster.len());
    for spec in roster {
        let (ens, _) = train_defense(split, classifier, std::slice::from_ref(spec), &single, TrainHooks::default())?;
        generators.extend(ens.generators);
    }
    let joint = TrainConfig {
        generators: roster.len(),
        checkpoint_every: 0,
        ..config.clone()
    };
    let (joint_ens, _) = train_defense(split, classifier, roster, &joint, TrainHooks::default())?;
    assemble_ensemble(generators, joint_ens.discriminator, roster.to_vec())
}
