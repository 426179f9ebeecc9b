//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria 1-7 always run on synthetic data. `--desk` (or
//! `GENMIX_TIER=desk`) adds the MNIST criteria 8-11 at desk scale; `--full`
//! (or `GENMIX_TIER=full`) adds the full-schedule runs. MNIST is read from
//! `GENMIX_MNIST_DIR` (default `/root/mnist`); trained models and results
//! are cached under `GENMIX_ACCEPT_DIR` (default `target/acceptance`).

use std::path::{Path, PathBuf};
use std::time::Instant;

use genmix_core::attacks::{apply_attack, attack_deepfool, attack_fgsm, attack_iterative_linf, perturbation_norm, AttackKind, AttackSpec, SAPN_MAX_FRACTION};
use genmix_core::data::{load_mnist, split_train, Dataset, MnistPart, RngStreams, SplitPair};
use genmix_core::defense::{
    accuracy, competitive_step, pretrain_classifier, train_defense, train_separate_then_combine, write_log_csv, AttackSource, EnsembleState,
    TrainConfig, TrainEvent, TrainHooks, WinnerMode,
};
use genmix_core::eval::{post_defense_accuracy, EvalOptions};
use genmix_core::models::{build_generator, build_initialized, build_large_generator, NetworkModel, Role};
use genmix_core::nn::gradcheck::check_gradients;
use genmix_core::nn::loss::binary_cross_entropy;
use genmix_core::nn::{param_count, AdamState, GradRequest, Layer, Mode, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
enum Tier {
    Fast,
    Desk,
    Full,
}

// Criterion 1. Smooth layers take a larger finite-difference step to keep
// f32 rounding in the differenced loss small; ReLU, ELU (whose curvature
// jumps at 0) and max pooling keep a small step so it rarely straddles a
// kink.
const GRAD_H_SMOOTH: f32 = 1e-2;
const GRAD_H_KINK: f32 = 1e-3;
const GRAD_TOL: f64 = 1e-3;
const GRAD_FLOOR: f64 = 0.1;
// Criterion 3.
const BUDGET_TOL: f64 = 1e-6;
// Criterion 7.
const DF_TOL: f64 = 1e-4;
// Criterion 8.
const CLF_DESK_MIN: f64 = 0.980;
const CLF_FULL: (f64, f64) = (0.987, 0.005);
// Criterion 9: paper success rates in table order, and tolerances.
const PAPER_SUCCESS: [(AttackKind, f64); 9] = [
    (AttackKind::Fgsm, 0.898),
    (AttackKind::Pgd, 1.000),
    (AttackKind::Df, 1.000),
    (AttackKind::Aun, 0.906),
    (AttackKind::Bim, 0.906),
    (AttackKind::Agn, 0.906),
    (AttackKind::Ragn, 0.945),
    (AttackKind::Sapn, 0.906),
    (AttackKind::Slide, 0.883),
];
const SUCCESS_TOL_TIGHT: f64 = 0.05;
const SUCCESS_TOL: f64 = 0.10;
// Criterion 10.
const FGSM_FULL: (f64, f64) = (0.975, 0.03);
const FGSM_REDUCED_GAIN: f64 = 0.40;
// Criterion 11.
const HARD_MAX: f64 = 0.40;
// Criteria 12-15.
const JOINT3_RANGE: (f64, f64) = (0.74, 0.85);
const FASTER9: (f64, f64) = (0.632, 3.0 * 0.021);
const FASTER_VS_STANDARD: f64 = 0.06;
const SEPARATE_GAIN: f64 = 0.05;
const LARGE_VS_MIXTURE: f64 = 0.06;

/// Desk schedule for the nine single-attack runs of criterion 11: a
/// subset of each training half and of the test set.
const DESK_HARD_HALF: usize = 4096;
const DESK_HARD_INIT: usize = 2;
const DESK_HARD_EPOCHS: usize = 10;
const DESK_HARD_TEST: usize = 2000;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let env_tier = std::env::var("GENMIX_TIER").unwrap_or_default();
    let tier = if args.iter().any(|a| a == "--full") || env_tier == "full" {
        Tier::Full
    } else if args.iter().any(|a| a == "--desk") || env_tier == "desk" {
        Tier::Desk
    } else {
        Tier::Fast
    };
    // `cargo test -- --list` probes every target; there are no listable tests here.
    if args.iter().any(|a| a == "--list") {
        return;
    }
    println!("acceptance tier: {tier:?}");
    let mut failed = 0;
    let mut run = |id: &str, name: &str, need: Tier, f: &dyn Fn() -> Outcome| {
        if tier < need {
            println!("SKIP {id:>3} {name} (needs --{})", if need == Tier::Full { "full" } else { "desk" });
            return;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
        let (ok, detail) = match outcome {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        failed += !ok as usize;
        println!(
            "{} {id:>3} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    };

    run("1", "gradient checks", Tier::Fast, &c1_gradients);
    run("2", "parameter counts", Tier::Fast, &c2_param_counts);
    run("3", "attack budgets", Tier::Fast, &c3_budgets);
    run("4", "winner-take-all", Tier::Fast, &c4_winner_take_all);
    run("5", "determinism", Tier::Fast, &c5_determinism);
    run("6a", "one-step iterative attack equals FGSM", Tier::Fast, &c6_iterative_collapse);
    run("6b", "single generator equals GAN alternation", Tier::Fast, &c6_gan_collapse);
    run("7", "DeepFool oracle", Tier::Fast, &c7_deepfool);

    let desk = Desk::from_env();
    run("8a", "classifier, 10 epochs", Tier::Desk, &|| desk.c8_classifier(10));
    run("8b", "classifier, 100 epochs", Tier::Desk, &|| desk.c8_classifier(100));
    run("9", "attack success", Tier::Desk, &|| desk.c9_attack_success());
    run("10a", "FGSM defense, reduced schedule", Tier::Desk, &|| desk.c10_reduced());
    run("11", "hard attacks", Tier::Desk, &|| desk.c11_hard(tier == Tier::Full));
    run("10b", "FGSM defense, full schedule", Tier::Full, &|| desk.c10_full());
    run("12", "joint 3 attacks", Tier::Full, &|| desk.c12_joint3());
    run("13", "faster initialization, 9 attacks", Tier::Full, &|| desk.c13_faster9());
    run("14", "separate then combine", Tier::Full, &|| desk.c14_separate());
    run("15", "large generator", Tier::Full, &|| desk.c15_large());

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn images(b: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![b, 1, 28, 28], (0..b * 784).map(|_| r.gen_range(-0.5f32..1.5).clamp(0.0, 1.0)).collect()).unwrap()
}

fn classifier(seed: u64) -> NetworkModel {
    build_initialized(Role::Classifier, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

// ---------------------------------------------------------------- criterion 1

fn conv(name: &str, i: usize, o: usize, k: usize, p: usize) -> Layer {
    Layer::Conv2d {
        name: name.into(),
        in_ch: i,
        out_ch: o,
        kernel: k,
        padding: p,
    }
}

fn randomize_affine(net: &mut Network, rng: &mut ChaCha8Rng) {
    net.init_uniform(rng);
    let names: Vec<String> = net.params().names().map(String::from).collect();
    for n in names {
        let t = net.params_mut().tensor_mut(&n).unwrap();
        if n.ends_with(".gamma") || n.ends_with(".running_var") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        } else if n.ends_with(".beta") || n.ends_with(".bias") || n.ends_with(".running_mean") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
}

fn c1_gradients() -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut cases = 0;
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let ch = rng.gen_range(1..=3);
        let out = rng.gen_range(1..=3);
        let side = rng.gen_range(4..=7) * 2;
        let k = [3, 5][rng.gen_range(0..2)];
        let pad = rng.gen_range(0..=k / 2);
        let bn = || Layer::BatchNorm2d { name: "bn".into(), channels: ch };
        let flat = ch * side * side;
        let dense = Layer::Dense {
            name: "fc".into(),
            in_features: flat,
            out_features: rng.gen_range(2..=5),
        };
        let even_conv = conv("c", ch, out, 3, 1);
        let layer_cases: Vec<(&str, Vec<Layer>, Mode, f32)> = vec![
            ("conv2d", vec![conv("c", ch, out, k, pad)], Mode::Train, GRAD_H_SMOOTH),
            ("batchnorm2d-train", vec![bn()], Mode::Train, GRAD_H_SMOOTH),
            ("batchnorm2d-eval", vec![bn()], Mode::Eval, GRAD_H_SMOOTH),
            ("dense", vec![Layer::Flatten, dense.clone()], Mode::Train, GRAD_H_SMOOTH),
            ("elu", vec![even_conv.clone(), Layer::Elu], Mode::Train, GRAD_H_KINK),
            ("relu", vec![even_conv.clone(), Layer::Relu], Mode::Train, GRAD_H_KINK),
            ("sigmoid", vec![even_conv.clone(), Layer::Sigmoid], Mode::Train, GRAD_H_SMOOTH),
            ("avgpool2", vec![even_conv.clone(), Layer::AvgPool2], Mode::Train, GRAD_H_SMOOTH),
            ("maxpool2", vec![even_conv.clone(), Layer::MaxPool2], Mode::Train, GRAD_H_KINK),
            ("flatten", vec![Layer::Flatten, dense], Mode::Train, GRAD_H_SMOOTH),
        ];
        for (name, layers, mode, h) in layer_cases {
            let mut net = Network::new(layers, vec![ch, side, side])?;
            randomize_affine(&mut net, &mut rng);
            let batch = rng.gen_range(2..=4);
            let x = Tensor::new(vec![batch, ch, side, side], (0..batch * flat).map(|_| rng.gen_range(0.0..1.0)).collect())?;
            let rep = check_gradients(&net, &x, mode, h, 30, GRAD_FLOOR, seed)?;
            cases += 1;
            if rep.max_rel_error > worst.0 || worst.1.is_empty() {
                worst = (rep.max_rel_error, format!("{name} shape {ch}x{side}x{side} ({})", rep.worst));
            }
        }
    }
    Ok((worst.0 <= GRAD_TOL, format!("{cases} cases, max rel err {:.2e} <= {GRAD_TOL:.0e}, worst {}", worst.0, worst.1)))
}

// ---------------------------------------------------------------- criterion 2

fn c2_param_counts() -> Outcome {
    let g = param_count(build_generator().params(), true);
    let l = param_count(build_large_generator().params(), true);
    Ok((g == 28_609 && l == 333_697, format!("generator {g} (28609), large generator {l} (333697)")))
}

// ---------------------------------------------------------------- criterion 3

fn c3_budgets() -> Outcome {
    let c = classifier(11);
    let x = images(32, 5);
    let y: Vec<u8> = (0..32).map(|i| (i % 10) as u8).collect();
    let mut bad = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    for spec in AttackSpec::roster() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = apply_attack(&spec, &c, &x, &y, &mut rng)?;
        let in_box = r.adversarial.data().iter().all(|v| (0.0..=1.0).contains(v));
        let norm = spec.kind.norm();
        let mut excess = f64::NEG_INFINITY;
        for i in 0..32 {
            let d = perturbation_norm(x.row(i), r.adversarial.row(i), norm) as f64;
            excess = excess.max(d - spec.epsilon as f64);
        }
        worst_excess = worst_excess.max(excess / spec.epsilon as f64);
        if spec.kind == AttackKind::Sapn {
            let cap = (784.0f64 * SAPN_MAX_FRACTION).floor() as usize;
            let touched = (0..32)
                .map(|i| x.row(i).iter().zip(r.adversarial.row(i)).filter(|(a, b)| a != b).count())
                .max()
                .unwrap_or(0);
            if touched > cap {
                bad.push(format!("SAPN touched {touched} > {cap} pixels"));
            }
        }
        if !in_box || excess > BUDGET_TOL * (spec.epsilon as f64).max(1.0) {
            bad.push(format!("{} ({norm:?}) box {in_box} excess {excess:.3e}", spec.kind));
        }
    }
    let detail = if bad.is_empty() {
        format!("9 attacks x 32 images in [0,1], largest norm/eps - 1 = {worst_excess:.2e}")
    } else {
        bad.join("; ")
    };
    Ok((bad.is_empty(), detail))
}

// ---------------------------------------------------------------- criterion 4

fn synthetic_split(n: usize, seed: u64) -> SplitPair {
    split_train(&Dataset::new(images(n, seed), None).unwrap(), &RngStreams::new(seed)).unwrap()
}

fn c4_winner_take_all() -> Outcome {
    let clf = classifier(21);
    let clf_sum = clf.params().checksum();
    let roster = vec![
        AttackSpec::default_for(AttackKind::Fgsm),
        AttackSpec::default_for(AttackKind::Bim),
        AttackSpec::default_for(AttackKind::Agn),
    ];
    let config = TrainConfig {
        generators: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let streams = RngStreams::new(4);
    let mut ens = EnsembleState::new(&config, roster.clone(), &streams)?;
    let source = AttackSource::new(&clf, &roster, streams);
    let mut violations = Vec::new();
    let mut wins = [0usize; 3];
    for step in 0..50u64 {
        let canon = images(16, 500 + step);
        let x = images(16, 600 + step);
        let (r, x_adv) = source.draw("acceptance", step, &x, &[])?;
        let before = ens.generator_checksums();
        let rep = competitive_step(&mut ens, &canon, &x_adv, roster[r].kind, WinnerMode::Batch)?;
        let after = ens.generator_checksums();
        let changed: Vec<usize> = (0..3).filter(|&j| before[j] != after[j]).collect();
        wins[rep.winner] += 1;
        if changed != [rep.winner] {
            violations.push(format!("step {step}: changed {changed:?}, winner {}", rep.winner));
        }
        if clf.params().checksum() != clf_sum {
            violations.push(format!("step {step}: classifier changed"));
        }
    }
    let detail = if violations.is_empty() {
        format!("50 steps, one checksum change each, wins per generator {wins:?}, classifier constant")
    } else {
        violations.join("; ")
    };
    Ok((violations.is_empty(), detail))
}

// ---------------------------------------------------------------- criterion 5

fn micro_run(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let split = synthetic_split(512, 3);
    let clf = classifier(31);
    let roster = vec![AttackSpec::default_for(AttackKind::Fgsm), AttackSpec::default_for(AttackKind::Agn)];
    let config = TrainConfig {
        generators: 2,
        init_epochs: 2,
        train_epochs: 2,
        checkpoint_every: 1,
        seed: 17,
        ..TrainConfig::default()
    };
    let hooks = TrainHooks {
        checkpoint_dir: Some(dir.join("checkpoints")),
        ..TrainHooks::default()
    };
    let (_, log) = train_defense(&split, &clf, &roster, &config, hooks)?;
    write_log_csv(dir.join("train_log.csv"), 2, &log)?;
    Ok(())
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn c5_determinism() -> Outcome {
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    micro_run(a.path())?;
    micro_run(b.path())?;
    let fa = files(a.path());
    let fb = files(b.path());
    let rel = |base: &Path, fs: &[PathBuf]| fs.iter().map(|p| p.strip_prefix(base).unwrap().to_path_buf()).collect::<Vec<_>>();
    if rel(a.path(), &fa) != rel(b.path(), &fb) {
        return Ok((false, "runs wrote different file sets".into()));
    }
    let mut differing = Vec::new();
    let mut bytes = 0;
    for (pa, pb) in fa.iter().zip(&fb) {
        let (da, db) = (std::fs::read(pa)?, std::fs::read(pb)?);
        bytes += da.len();
        if da != db {
            differing.push(pa.strip_prefix(a.path()).unwrap().display().to_string());
        }
    }
    let detail = if differing.is_empty() {
        format!("{} files ({} checkpoints + log), {bytes} bytes identical", fa.len(), fa.len() - 1)
    } else {
        format!("differing: {}", differing.join(", "))
    };
    Ok((differing.is_empty(), detail))
}

// ---------------------------------------------------------------- criterion 6

fn c6_iterative_collapse() -> Outcome {
    let c = classifier(41);
    let x = images(32, 9);
    let y: Vec<u8> = (0..32).map(|i| (i % 10) as u8).collect();
    let mut all = true;
    let mut checked = Vec::new();
    for kind in [AttackKind::Pgd, AttackKind::Bim] {
        for eps in [0.1f32, 0.3, 0.5] {
            let fgsm = attack_fgsm(&c, &x, &y, &AttackSpec::new(AttackKind::Fgsm, eps))?;
            let spec = AttackSpec {
                steps: 1,
                step_size: eps,
                random_start: false,
                ..AttackSpec::new(kind, eps)
            };
            let it = attack_iterative_linf(&c, &x, &y, &spec, &mut ChaCha8Rng::seed_from_u64(0))?;
            let same = fgsm.adversarial.data().iter().zip(it.adversarial.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            all &= same;
            checked.push(format!("{kind}@{eps}:{}", if same { "eq" } else { "DIFF" }));
        }
    }
    Ok((all, format!("bitwise over 32 images: {}", checked.join(" "))))
}

fn plain_gan_step(g: &mut NetworkModel, g_opt: &mut AdamState, d: &mut NetworkModel, d_opt: &mut AdamState, canon: &Tensor, x: &Tensor) {
    let (y, g_tape) = g.forward_tape(x, Mode::Train).unwrap();
    let (dy, d_tape) = d.forward_tape(&y, Mode::Eval).unwrap();
    let (_, seed) = binary_cross_entropy(&dy, true);
    let gin = d.backward(&d_tape, &seed, GradRequest::INPUT).unwrap().input_grad.unwrap();
    let gg = g.backward(&g_tape, &gin, GradRequest::PARAMS).unwrap().grads;
    g_opt.step(g.params_mut(), &gg).unwrap();
    g.commit_batch_stats(&g_tape).unwrap();

    let (dr, tr) = d.forward_tape(canon, Mode::Eval).unwrap();
    let (_, sr) = binary_cross_entropy(&dr, true);
    let (df, tf) = d.forward_tape(&y, Mode::Eval).unwrap();
    let (_, sf) = binary_cross_entropy(&df, false);
    let mut grads = d.backward(&tr, &sr, GradRequest::PARAMS).unwrap().grads;
    for (name, t) in d.backward(&tf, &sf, GradRequest::PARAMS).unwrap().grads.iter() {
        grads.accumulate(name, t.clone()).unwrap();
    }
    d_opt.step(d.params_mut(), &grads).unwrap();
}

/// The competitive step scores real and fake rows in one discriminator
/// pass, so its discriminator gradients are compared through the Adam
/// first moments (relative to each tensor's largest entry) rather than
/// bitwise; the generator must match bitwise.
fn c6_gan_collapse() -> Outcome {
    let config = TrainConfig {
        generators: 1,
        ..TrainConfig::default()
    };
    let mut ens = EnsembleState::new(&config, vec![AttackSpec::default_for(AttackKind::Fgsm)], &RngStreams::new(8))?;
    let mut worst_d = 0.0f32;
    let steps = 5u64;
    for step in 0..steps {
        let mut g = ens.generators[0].clone();
        let mut d = ens.discriminator.clone();
        let mut g_opt = ens.generator_opts[0].clone();
        let mut d_opt = ens.discriminator_opt.clone();
        let canon = images(8, 70 + step);
        let x = images(8, 80 + step);
        let r = competitive_step(&mut ens, &canon, &x, AttackKind::Fgsm, WinnerMode::Batch)?;
        plain_gan_step(&mut g, &mut g_opt, &mut d, &mut d_opt, &canon, &x);
        if r.winner != 0 || !g.params().bitwise_eq(ens.generators[0].params()) {
            return Ok((false, format!("generator differs at step {step}")));
        }
        for ((na, ma, _), (nb, mb, _)) in d_opt.moments().zip(ens.discriminator_opt.moments()) {
            if na != nb {
                return Ok((false, format!("moment order {na} vs {nb}")));
            }
            let scale = ma.data().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);
            for (a, b) in ma.data().iter().zip(mb.data()) {
                worst_d = worst_d.max((a - b).abs() / scale);
            }
        }
        ens.discriminator.params_mut().clone_from(d.params_mut());
        ens.discriminator_opt = d_opt;
    }
    let ok = worst_d <= 1e-4;
    Ok((ok, format!("{steps} steps: generator bitwise equal, discriminator gradient rel diff {worst_d:.1e} <= 1e-4")))
}

// ---------------------------------------------------------------- criterion 7

fn c7_deepfool() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..20 {
        let w = [rng.gen_range(0.5f32..3.0), rng.gen_range(0.5f32..3.0)];
        let b = -rng.gen_range(0.6f32..0.9) * (w[0] + w[1]);
        let mut net = Network::new(
            vec![Layer::Dense {
                name: "fc".into(),
                in_features: 2,
                out_features: 2,
            }],
            vec![2],
        )?;
        net.params_mut().tensor_mut("fc.weight")?.data_mut().copy_from_slice(&[0.0, 0.0, w[0], w[1]]);
        net.params_mut().tensor_mut("fc.bias")?.data_mut().copy_from_slice(&[0.0, b]);
        let p = [rng.gen_range(0.3f32..0.5), rng.gen_range(0.3f32..0.5)];
        let f = w[0] as f64 * p[0] as f64 + w[1] as f64 * p[1] as f64 + b as f64;
        if f >= 0.0 {
            continue;
        }
        let wn2 = (w[0] as f64).powi(2) + (w[1] as f64).powi(2);
        let expected: Vec<f64> = (0..2).map(|d| p[d] as f64 - f / wn2 * w[d] as f64).collect();
        if expected.iter().any(|v| !(0.0..=1.0).contains(v)) {
            continue;
        }
        let spec = AttackSpec {
            steps: 1,
            overshoot: 0.0,
            ..AttackSpec::new(AttackKind::Df, 10.0)
        };
        let r = attack_deepfool(&net, &Tensor::new(vec![1, 2], p.to_vec())?, &[0], &spec)?;
        for d in 0..2 {
            worst = worst.max((r.adversarial.row(0)[d] as f64 - expected[d]).abs());
        }
        cases += 1;
    }
    Ok((cases >= 10 && worst <= DF_TOL, format!("{cases} random hyperplanes, max deviation {worst:.2e} <= {DF_TOL:.0e}")))
}

// ---------------------------------------------------------------- MNIST tiers

struct Desk {
    mnist: PathBuf,
    cache: PathBuf,
}

/// Outcome of one defense run on (a subset of) the MNIST test set.
struct RunResult {
    overall: f64,
    undefended: f64,
}

enum Training {
    Joint,
    Separate,
}

impl Desk {
    fn from_env() -> Self {
        let mnist = std::env::var_os("GENMIX_MNIST_DIR").map(PathBuf::from).unwrap_or_else(|| "/root/mnist".into());
        let cache = std::env::var_os("GENMIX_ACCEPT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"));
        Self { mnist, cache }
    }

    fn train_set(&self) -> Result<Dataset, Box<dyn std::error::Error>> {
        Ok(load_mnist(&self.mnist, MnistPart::Train, true)?)
    }

    fn test_set(&self) -> Result<Dataset, Box<dyn std::error::Error>> {
        Ok(load_mnist(&self.mnist, MnistPart::Test, true)?)
    }

    /// The classifier pretrained for `epochs` with seed 0, trained on first
    /// use and cached; returns it with its test accuracy.
    fn classifier(&self, epochs: usize) -> Result<(NetworkModel, f64), Box<dyn std::error::Error>> {
        let path = self.cache.join(format!("classifier_e{epochs:03}.mgad"));
        let test = self.test_set()?;
        if path.exists() {
            let (m, _, meta) = NetworkModel::load(&path)?;
            if meta["epochs"] == json!(epochs) {
                let acc = accuracy(&m, &test, 500)?;
                return Ok((m, acc));
            }
        }
        eprintln!("  pretraining classifier for {epochs} epochs");
        let train = self.train_set()?;
        let (m, rep) = pretrain_classifier(&train, &test, epochs, 1e-3, 128, &RngStreams::new(0))?;
        std::fs::create_dir_all(&self.cache)?;
        m.save(&path, None, json!({"epochs": epochs, "seed": 0}))?;
        Ok((m, rep.test_accuracy))
    }

    fn c8_classifier(&self, epochs: usize) -> Outcome {
        let (_, acc) = self.classifier(epochs)?;
        Ok(if epochs == 100 {
            let ok = (acc - CLF_FULL.0).abs() <= CLF_FULL.1;
            (ok, format!("test accuracy {} (target {} +- {})", pct(acc), pct(CLF_FULL.0), pct(CLF_FULL.1)))
        } else {
            (acc >= CLF_DESK_MIN, format!("test accuracy {} (>= {})", pct(acc), pct(CLF_DESK_MIN)))
        })
    }

    /// Success of each attack on 128 training images drawn with seed 0
    /// (the batch `genmix attack-bench` uses), against the 100-epoch
    /// classifier.
    fn c9_attack_success(&self) -> Outcome {
        let (clf, _) = self.classifier(100)?;
        let train = self.train_set()?;
        let streams = RngStreams::new(0);
        let mut idx = rand::seq::index::sample(&mut streams.derive("bench/batch", 0), train.len(), 128).into_vec();
        idx.sort_unstable();
        let batch = train.subset(&idx);
        let y = batch.labels().unwrap().to_vec();
        let mut ok = true;
        let mut parts = Vec::new();
        for (r, (kind, paper)) in PAPER_SUCCESS.iter().enumerate() {
            let spec = AttackSpec::default_for(*kind);
            let res = apply_attack(&spec, &clf, batch.images(), &y, &mut streams.derive("noise/bench", r as u64))?;
            let rate = res.success_rate();
            let tol = if matches!(kind, AttackKind::Pgd | AttackKind::Df) { SUCCESS_TOL_TIGHT } else { SUCCESS_TOL };
            let hit = (rate - paper).abs() <= tol + 1e-12;
            ok &= hit;
            parts.push(format!("{kind} {}{}", pct(rate), if hit { "" } else { "(!)" }));
        }
        Ok((ok, format!("{} vs paper +-5/+-10", parts.join(", "))))
    }

    /// Trains (or reloads) a defense and evaluates it on the first
    /// `test_limit` test images against the 100-epoch classifier.
    #[allow(clippy::too_many_arguments)]
    fn defense_run(
        &self,
        name: &str,
        roster: &[AttackSpec],
        config: &TrainConfig,
        mode: Training,
        half_limit: Option<usize>,
        test_limit: Option<usize>,
    ) -> Result<RunResult, Box<dyn std::error::Error>> {
        let dir = self.cache.join(name);
        let key = json!({
            "config": config,
            "roster": roster,
            "mode": matches!(mode, Training::Separate),
            "half_limit": half_limit,
            "test_limit": test_limit,
            "classifier_epochs": 100,
        });
        let result_path = dir.join("result.json");
        if let Ok(text) = std::fs::read_to_string(&result_path) {
            let v: Value = serde_json::from_str(&text)?;
            if v["key"] == key {
                return Ok(RunResult {
                    overall: v["overall"].as_f64().unwrap_or(f64::NAN),
                    undefended: v["undefended"].as_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let (clf, _) = self.classifier(100)?;
        let train = self.train_set()?.unlabelled();
        let mut split = split_train(&train, &RngStreams::new(config.seed))?;
        if let Some(n) = half_limit {
            split = SplitPair {
                canonical: split.canonical.head(n),
                transformed_base: split.transformed_base.head(n),
                canonical_indices: split.canonical_indices[..n].to_vec(),
                transformed_indices: split.transformed_indices[..n].to_vec(),
            };
        }
        let t = Instant::now();
        eprintln!("  {name}: training on {} + {} images", split.canonical.len(), split.transformed_base.len());
        let ens = match mode {
            Training::Joint => {
                let hooks = TrainHooks {
                    observer: Some(Box::new(|e: &TrainEvent| match e {
                        TrainEvent::InitDone => eprintln!("  {name}: initialized after {:.0}s", t.elapsed().as_secs_f64()),
                        TrainEvent::EpochEnd { epoch } => eprintln!("  {name}: epoch {epoch} after {:.0}s", t.elapsed().as_secs_f64()),
                        _ => {}
                    })),
                    ..TrainHooks::default()
                };
                train_defense(&split, &clf, roster, config, hooks)?.0
            }
            Training::Separate => train_separate_then_combine(&split, &clf, roster, config)?,
        };
        ens.save(dir.join("ensemble"), &json!({}))?;
        let mut test = self.test_set()?;
        if let Some(n) = test_limit {
            test = test.head(n);
        }
        let rep = post_defense_accuracy(&ens, &clf, &test, roster, &EvalOptions::default())?;
        rep.write_csvs(&dir, name)?;
        let result = RunResult {
            overall: rep.overall_accuracy,
            undefended: rep.baseline_accuracy,
        };
        let out = json!({
            "key": key,
            "overall": result.overall,
            "undefended": result.undefended,
            "per_attack": rep.attacks.iter().map(|a| json!([a.attack.to_string(), a.accuracy()])).collect::<Vec<_>>(),
            "seconds": t.elapsed().as_secs_f64(),
        });
        std::fs::write(&result_path, serde_json::to_string_pretty(&out)?)?;
        Ok(result)
    }

    fn full_config(generators: usize) -> TrainConfig {
        TrainConfig {
            generators,
            checkpoint_every: 0,
            ..TrainConfig::default()
        }
    }

    fn fgsm() -> Vec<AttackSpec> {
        vec![AttackSpec::default_for(AttackKind::Fgsm)]
    }

    fn c10_reduced(&self) -> Outcome {
        let config = TrainConfig {
            init_epochs: 2,
            train_epochs: 20,
            ..Self::full_config(1)
        };
        let r = self.defense_run("fgsm_reduced", &Self::fgsm(), &config, Training::Joint, None, None)?;
        let gain = r.overall - r.undefended;
        Ok((
            gain >= FGSM_REDUCED_GAIN,
            format!("post-defense {} vs undefended {} (gain {} >= {})", pct(r.overall), pct(r.undefended), pct(gain), pct(FGSM_REDUCED_GAIN)),
        ))
    }

    fn c10_full(&self) -> Outcome {
        let r = self.defense_run("fgsm_full", &Self::fgsm(), &Self::full_config(1), Training::Joint, None, None)?;
        let ok = (r.overall - FGSM_FULL.0).abs() <= FGSM_FULL.1;
        Ok((ok, format!("post-defense {} (target {} +- {})", pct(r.overall), pct(FGSM_FULL.0), pct(FGSM_FULL.1))))
    }

    /// One single-generator run per attack; desk scale unless `full`.
    fn c11_hard(&self, full: bool) -> Outcome {
        let mut accs = Vec::new();
        for spec in AttackSpec::roster() {
            let r = if full {
                self.defense_run(&format!("single_{}_full", spec.kind), &[spec], &Self::full_config(1), Training::Joint, None, None)?
            } else {
                let config = TrainConfig {
                    init_epochs: DESK_HARD_INIT,
                    train_epochs: DESK_HARD_EPOCHS,
                    ..Self::full_config(1)
                };
                self.defense_run(
                    &format!("single_{}_desk", spec.kind),
                    &[spec],
                    &config,
                    Training::Joint,
                    Some(DESK_HARD_HALF),
                    Some(DESK_HARD_TEST),
                )?
            };
            accs.push((spec.kind, r.overall));
        }
        let mut order = accs.clone();
        order.sort_by(|a, b| a.1.total_cmp(&b.1));
        let lowest: Vec<AttackKind> = order[..2].iter().map(|p| p.0).collect();
        let aun = accs.iter().find(|p| p.0 == AttackKind::Aun).unwrap().1;
        let agn = accs.iter().find(|p| p.0 == AttackKind::Agn).unwrap().1;
        let ok = aun <= HARD_MAX && agn <= HARD_MAX && lowest.contains(&AttackKind::Aun) && lowest.contains(&AttackKind::Agn);
        let table: Vec<String> = accs.iter().map(|(k, a)| format!("{k} {}", pct(*a))).collect();
        Ok((
            ok,
            format!(
                "{} schedule: {}; AUN, AGN <= {} and lowest two",
                if full { "full" } else { "desk" },
                table.join(", "),
                pct(HARD_MAX)
            ),
        ))
    }

    fn three() -> Vec<AttackSpec> {
        [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Df].into_iter().map(AttackSpec::default_for).collect()
    }

    fn joint3(&self) -> Result<RunResult, Box<dyn std::error::Error>> {
        self.defense_run("joint3_full", &Self::three(), &Self::full_config(3), Training::Joint, None, None)
    }

    fn joint9(&self) -> Result<RunResult, Box<dyn std::error::Error>> {
        self.defense_run("joint9_full", &AttackSpec::roster(), &Self::full_config(9), Training::Joint, None, None)
    }

    fn c12_joint3(&self) -> Outcome {
        let r = self.joint3()?;
        let ok = (JOINT3_RANGE.0..=JOINT3_RANGE.1).contains(&r.overall);
        Ok((ok, format!("overall {} in [{}, {}]", pct(r.overall), pct(JOINT3_RANGE.0), pct(JOINT3_RANGE.1))))
    }

    fn c13_faster9(&self) -> Outcome {
        let config = TrainConfig {
            faster_init: true,
            ..Self::full_config(9)
        };
        let fast = self.defense_run("faster9_full", &AttackSpec::roster(), &config, Training::Joint, None, None)?;
        let standard = self.joint9()?;
        let ok = (fast.overall - FASTER9.0).abs() <= FASTER9.1 && (fast.overall - standard.overall).abs() <= FASTER_VS_STANDARD;
        Ok((
            ok,
            format!(
                "overall {} (target {} +- {}), standard init {} (within {})",
                pct(fast.overall),
                pct(FASTER9.0),
                pct(FASTER9.1),
                pct(standard.overall),
                pct(FASTER_VS_STANDARD)
            ),
        ))
    }

    fn c14_separate(&self) -> Outcome {
        let sep = self.defense_run("separate3_full", &Self::three(), &Self::full_config(3), Training::Separate, None, None)?;
        let joint = self.joint3()?;
        let gain = sep.overall - joint.overall;
        Ok((
            gain >= SEPARATE_GAIN,
            format!("separate {} vs joint {} (gain {} >= {})", pct(sep.overall), pct(joint.overall), pct(gain), pct(SEPARATE_GAIN)),
        ))
    }

    fn c15_large(&self) -> Outcome {
        let config = TrainConfig {
            large_generator: true,
            ..Self::full_config(1)
        };
        let large = self.defense_run("large9_full", &AttackSpec::roster(), &config, Training::Joint, None, None)?;
        let mixture = self.joint9()?;
        let ok = (large.overall - mixture.overall).abs() <= LARGE_VS_MIXTURE;
        Ok((
            ok,
            format!("large {} vs mixture {} (within {})", pct(large.overall), pct(mixture.overall), pct(LARGE_VS_MIXTURE)),
        ))
    }
}
