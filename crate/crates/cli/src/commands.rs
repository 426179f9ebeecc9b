use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use genmix_core::attacks::{apply_attack, save_attack_cache, AttackSpec};
use genmix_core::data::{load_mnist, mnist_images_path, mnist_labels_path, split_train, Dataset, MnistPart, RngStreams, SplitPair};
use genmix_core::defense::{
    pretrain_classifier, train_defense, train_separate_then_combine, write_log_csv, EnsembleState, TrainConfig, TrainEvent,
    TrainHooks,
};
use genmix_core::eval::{emit_sample_grid, post_defense_accuracy, specialization_labels, write_heatmaps, EvalOptions, Thresholds};
use genmix_core::models::{NetworkModel, Role};
use rand::seq::index::sample;
use serde_json::json;

use crate::args::{AttackBenchArgs, EvaluateArgs, Mode, Part, PretrainArgs, TrainDefenseArgs};
use crate::manifest::RunManifest;

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn load_classifier(path: &Path) -> Result<NetworkModel> {
    let (model, _, _) = NetworkModel::load(path).with_context(|| format!("loading classifier {}", path.display()))?;
    if model.role != Role::Classifier {
        bail!("{}: expected a classifier checkpoint, found {}", path.display(), model.role);
    }
    Ok(model)
}

fn load_part(dir: &Path, part: MnistPart, labels: bool) -> Result<Dataset> {
    Ok(load_mnist(dir, part, labels)?)
}

fn roster_or_default(attacks: &[AttackSpec]) -> Vec<AttackSpec> {
    if attacks.is_empty() {
        AttackSpec::roster()
    } else {
        attacks.to_vec()
    }
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let c = &a.common;
    create_out(&c.out)?;
    let mut m = RunManifest::new("pretrain", c.seed, serde_json::to_value(a)?);
    let (train, test) = m.stage("load", || {
        Ok((load_part(&c.mnist_dir, MnistPart::Train, true)?, load_part(&c.mnist_dir, MnistPart::Test, true)?))
    })?;
    for part in [MnistPart::Train, MnistPart::Test] {
        m.input(mnist_images_path(&c.mnist_dir, part))?;
        m.input(mnist_labels_path(&c.mnist_dir, part))?;
    }
    let (model, report) = m.stage("train", || {
        Ok(pretrain_classifier(&train, &test, a.epochs, a.lr, a.batch, &RngStreams::new(c.seed))?)
    })?;
    let path = c.out.join("classifier.mgad");
    model
        .save(&path, None, json!({ "epochs": a.epochs, "seed": c.seed, "test_accuracy": report.test_accuracy }))
        .with_context(|| format!("writing {}", path.display()))?;
    m.output(&path)?;
    m.result("test_accuracy", report.test_accuracy);
    m.result("epoch_losses", &report.epoch_losses);
    m.write(&c.out)?;
    println!("test accuracy {:.4}", report.test_accuracy);
    Ok(())
}

fn limit_split(split: SplitPair, limit: Option<usize>) -> SplitPair {
    let Some(n) = limit else { return split };
    let n = n.min(split.canonical.len());
    SplitPair {
        canonical: split.canonical.head(n),
        transformed_base: split.transformed_base.head(n),
        canonical_indices: split.canonical_indices[..n].to_vec(),
        transformed_indices: split.transformed_indices[..n].to_vec(),
    }
}

pub fn train_defense_cmd(a: &TrainDefenseArgs) -> Result<()> {
    let c = &a.common;
    let roster = roster_or_default(&a.attacks);
    let generators = a.generators.unwrap_or(if a.large_generator { 1 } else { roster.len() });
    let config = TrainConfig {
        generators,
        init_epochs: a.init_epochs,
        train_epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        faster_init: a.faster_init,
        perturb_fraction: a.perturb,
        seed: c.seed,
        large_generator: a.large_generator,
        winner_mode: a.winner.into(),
        checkpoint_every: a.checkpoint_every,
        precompute_attacks: a.cache_attacks,
    };
    config.validate()?;
    for spec in &roster {
        spec.validate()?;
    }
    create_out(&c.out)?;
    let mut m = RunManifest::new("train-defense", c.seed, json!({ "args": a, "train_config": config, "roster": roster }));
    let classifier = load_classifier(&a.classifier)?;
    m.input(&a.classifier)?;
    // Defense training is unsupervised: only the image file is read.
    let train = m.stage("load", || load_part(&c.mnist_dir, MnistPart::Train, false))?;
    m.input(mnist_images_path(&c.mnist_dir, MnistPart::Train))?;
    let split = limit_split(split_train(&train, &RngStreams::new(c.seed))?, a.limit);
    let ckpt_dir = c.out.join("checkpoints");

    match a.mode {
        Mode::Joint => {
            let mut sums = (0.0, 0.0, 0usize);
            let hooks = TrainHooks {
                checkpoint_dir: Some(ckpt_dir.clone()),
                metadata: json!({ "classifier": a.classifier }),
                observer: Some(Box::new(|e: &TrainEvent| match e {
                    TrainEvent::InitDone => eprintln!("initialization done"),
                    TrainEvent::Step { record, .. } => {
                        sums.0 += record.loss_g;
                        sums.1 += record.loss_d;
                        sums.2 += 1;
                    }
                    TrainEvent::EpochEnd { epoch } => {
                        let n = sums.2.max(1) as f64;
                        eprintln!("epoch {epoch}: loss_g {:.4} loss_d {:.4}", sums.0 / n, sums.1 / n);
                        sums = (0.0, 0.0, 0);
                    }
                    TrainEvent::Checkpoint { dir, .. } => eprintln!("checkpoint {}", dir.display()),
                })),
            };
            let (ens, log) = m.stage("train", || Ok(train_defense(&split, &classifier.net, &roster, &config, hooks)?))?;
            let log_path = c.out.join("train_log.csv");
            write_log_csv(&log_path, ens.len(), &log).with_context(|| format!("writing {}", log_path.display()))?;
            let mut wins = vec![0usize; ens.len()];
            for r in &log {
                wins[r.winner] += 1;
            }
            m.result("step_wins", wins);
            m.result("provenance", &ens.provenance);
            m.output(&log_path)?;
        }
        Mode::Separate => {
            let ens = m.stage("train", || Ok(train_separate_then_combine(&split, &classifier.net, &roster, &config)?))?;
            ens.save(ckpt_dir.join("final"), &json!({ "seed": c.seed, "config": config, "mode": "separate" }))?;
            m.result("provenance", &ens.provenance);
        }
    }
    m.output(&ckpt_dir)?;
    m.write(&c.out)?;
    println!("ensemble written to {}", ckpt_dir.join("final").display());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let c = &a.common;
    let ens = EnsembleState::load(&a.ensemble).with_context(|| format!("loading ensemble {}", a.ensemble.display()))?;
    let classifier = load_classifier(&a.classifier)?;
    let roster = if a.attacks.is_empty() { ens.roster.clone() } else { a.attacks.clone() };
    if roster.is_empty() {
        bail!("no attacks given and the ensemble records no roster");
    }
    create_out(&c.out)?;
    let mut m = RunManifest::new("evaluate", c.seed, serde_json::to_value(a)?);
    m.input(&a.ensemble)?;
    m.input(&a.classifier)?;
    let mut test = m.stage("load", || load_part(&c.mnist_dir, MnistPart::Test, true))?;
    m.input(mnist_images_path(&c.mnist_dir, MnistPart::Test))?;
    m.input(mnist_labels_path(&c.mnist_dir, MnistPart::Test))?;
    if let Some(n) = a.limit {
        test = test.head(n);
    }
    let opts = EvalOptions {
        batch_size: a.batch,
        seed: c.seed,
        threads: c.threads,
    };
    let report = m.stage("evaluate", || Ok(post_defense_accuracy(&ens, &classifier.net, &test, &roster, &opts)?))?;
    let mut outputs: Vec<PathBuf> = report.write_csvs(&c.out, &a.setting)?;

    let labels = specialization_labels(&report, &Thresholds::default());
    let mut spec_csv = String::from("generator,label,win_share,attacks_won,concentration,top_accuracy\n");
    for (j, l) in labels.iter().enumerate() {
        let _ = writeln!(spec_csv, "{j},{},{},{},{},{}", l.label, l.win_share, l.attacks_won, l.concentration, l.top_accuracy);
    }
    let spec_path = c.out.join("specialization.csv");
    std::fs::write(&spec_path, spec_csv).with_context(|| format!("writing {}", spec_path.display()))?;
    outputs.push(spec_path);

    if let Some(dir) = &a.emit_grids {
        let label = test.labels().expect("test set loaded with labels")[0];
        let first = test.images().select_rows(&[0]);
        outputs.extend(emit_sample_grid(&ens, &classifier.net, &first, label, &roster, dir, c.seed)?);
        outputs.extend(write_heatmaps(&report, dir)?);
    }
    for p in &outputs {
        m.output(p)?;
    }
    m.result("overall_accuracy", report.overall_accuracy);
    m.result("baseline_accuracy", report.baseline_accuracy);
    m.result(
        "per_attack",
        report.attacks.iter().map(|r| (r.attack.as_str(), r.accuracy())).collect::<Vec<_>>(),
    );
    m.write(&c.out)?;
    for r in &report.attacks {
        println!("{:<6} post-defense {:.4}  undefended {:.4}", r.attack.as_str(), r.accuracy(), r.baseline_accuracy());
    }
    println!("overall_accuracy {:.4}", report.overall_accuracy);
    Ok(())
}

pub fn attack_bench(a: &AttackBenchArgs) -> Result<()> {
    let c = &a.common;
    let classifier = load_classifier(&a.classifier)?;
    let part = match a.part {
        Part::Train => MnistPart::Train,
        Part::Test => MnistPart::Test,
    };
    let roster = roster_or_default(&a.attacks);
    for spec in &roster {
        spec.validate()?;
    }
    create_out(&c.out)?;
    let mut m = RunManifest::new("attack-bench", c.seed, serde_json::to_value(a)?);
    m.input(&a.classifier)?;
    let data = m.stage("load", || load_part(&c.mnist_dir, part, true))?;
    m.input(mnist_images_path(&c.mnist_dir, part))?;
    m.input(mnist_labels_path(&c.mnist_dir, part))?;
    let streams = RngStreams::new(c.seed);
    let mut idx = sample(&mut streams.derive("bench/batch", 0), data.len(), a.batch.min(data.len())).into_vec();
    idx.sort_unstable();
    let batch = data.subset(&idx);
    let labels = batch.labels().expect("loaded with labels");

    let mut table = String::from("attack,epsilon,success\n");
    let cache_dir = c.out.join("attack_cache");
    if a.cache_attacks {
        create_out(&cache_dir)?;
    }
    println!("{:<6} {:>8} {:>8}", "attack", "epsilon", "success");
    m.stage("attack", || {
        for (r, spec) in roster.iter().enumerate() {
            let result = apply_attack(spec, &classifier.net, batch.images(), labels, &mut streams.derive("noise/bench", r as u64))?;
            let rate = result.success_rate();
            println!("{:<6} {:>8} {:>7.1}%", spec.kind.as_str(), spec.epsilon, 100.0 * rate);
            let _ = writeln!(table, "{},{},{}", spec.kind.as_str(), spec.epsilon, rate);
            if a.cache_attacks {
                let path = cache_dir.join(format!("{r:02}_{}.mgac", spec.kind.as_str().to_ascii_lowercase()));
                save_attack_cache(&path, spec, &result, labels).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Ok(())
    })?;
    let path = c.out.join("attack_bench.csv");
    std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    m.output(&path)?;
    if a.cache_attacks {
        m.output(&cache_dir)?;
    }
    m.result("batch_indices", &idx);
    m.write(&c.out)?;
    Ok(())
}
