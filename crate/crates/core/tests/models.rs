use genmix_core::models::{
    build_classifier, build_discriminator, build_generator, build_initialized, build_large_generator, NetworkModel, Role,
};
use genmix_core::nn::{param_count, Layer, Mode, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn conv_params(i: usize, o: usize, k: usize) -> usize {
    o * i * k * k + o
}

fn bn_params(c: usize) -> usize {
    2 * c
}

fn dense_params(i: usize, o: usize) -> usize {
    o * i + o
}

fn per_layer(m: &NetworkModel) -> Vec<usize> {
    m.layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Conv2d { in_ch, out_ch, kernel, .. } => Some(conv_params(*in_ch, *out_ch, *kernel)),
            Layer::BatchNorm2d { channels, .. } => Some(bn_params(*channels)),
            Layer::Dense { in_features, out_features, .. } => Some(dense_params(*in_features, *out_features)),
            _ => None,
        })
        .collect()
}

fn images(b: usize) -> Tensor {
    Tensor::new(vec![b, 1, 28, 28], (0..b * 784).map(|i| ((i * 37) % 256) as f32 / 255.0).collect()).unwrap()
}

fn init(role: Role, seed: u64) -> NetworkModel {
    build_initialized(role, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn generator_parameter_count() {
    let g = build_generator();
    assert_eq!(param_count(g.params(), true), 28_609);
    assert_eq!(per_layer(&g), [320, 64, 9248, 64, 9248, 64, 9248, 64, 289]);
    assert_eq!(per_layer(&g).iter().sum::<usize>(), 28_609);
}

#[test]
fn large_generator_parameter_count() {
    let g = build_large_generator();
    assert_eq!(param_count(g.params(), true), 333_697);
    assert_eq!(
        per_layer(&g),
        [320, 64, 18496, 128, 73856, 256, 147584, 256, 73792, 128, 18464, 64, 289]
    );
}

#[test]
fn discriminator_parameter_count() {
    let d = build_discriminator();
    assert_eq!(
        per_layer(&d),
        [160, 2320, 2320, 4640, 9248, 18496, 36928, 590848, 1025]
    );
    assert_eq!(param_count(d.params(), true), 665_985);
    assert_eq!(param_count(d.params(), false), 665_985);
}

#[test]
fn classifier_parameter_count() {
    let c = build_classifier();
    assert_eq!(per_layer(&c), [conv_params(1, 6, 5), conv_params(6, 16, 5), 48120, 10164, 850]);
    assert_eq!(param_count(c.params(), true), 61_706);
}

#[test]
fn running_stats_are_not_trainable() {
    let g = build_generator();
    assert_eq!(param_count(g.params(), false), 28_609 + 4 * 2 * 32);
}

#[test]
fn generator_outputs_are_images_in_unit_interval() {
    for role in [Role::Generator, Role::LargeGenerator] {
        let g = init(role, 1);
        for mode in [Mode::Train, Mode::Eval] {
            let y = g.forward(&images(2), mode).unwrap();
            assert_eq!(y.shape(), &[2, 1, 28, 28]);
            let (lo, hi) = y.min_max();
            assert!(lo > 0.0 && hi < 1.0, "{role}: {lo} {hi}");
        }
    }
}

#[test]
fn discriminator_scores_are_probabilities() {
    let d = init(Role::Discriminator, 2);
    assert_eq!(d.output_shape(), [1]);
    let y = d.forward(&images(3), Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[3, 1]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn discriminator_spatial_trace() {
    let d = build_discriminator();
    let mut shape = vec![1, 28, 28];
    let mut sizes = vec![28];
    for layer in d.layers() {
        shape = layer.output_shape(&shape).unwrap();
        if matches!(layer, Layer::AvgPool2) {
            sizes.push(shape[1]);
        }
    }
    assert_eq!(sizes, [28, 14, 7, 3]);
}

#[test]
fn classifier_logits_and_zeroed_head() {
    let mut c = init(Role::Classifier, 3);
    assert_eq!(c.forward(&images(4), Mode::Eval).unwrap().shape(), &[4, 10]);
    for name in ["fc3.weight", "fc3.bias"] {
        c.params_mut().tensor_mut(name).unwrap().data_mut().fill(0.0);
    }
    let y = c.forward(&images(4), Mode::Eval).unwrap();
    assert!(y.data().iter().all(|&v| v == y.data()[0]));
    assert_eq!(genmix_core::nn::argmax_rows(&y), [0, 0, 0, 0]);
}

#[test]
fn init_is_seed_deterministic() {
    for role in [Role::Generator, Role::Discriminator, Role::Classifier, Role::LargeGenerator] {
        assert!(init(role, 7).params().bitwise_eq(init(role, 7).params()));
        assert!(!init(role, 7).params().bitwise_eq(init(role, 8).params()));
    }
}

#[test]
fn generator_checkpoint_size_and_round_trip() {
    let g = init(Role::Generator, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let meta = json!({ "epoch": 3, "seed": 4 });
    g.save(&path, None, meta).unwrap();

    let ckpt = genmix_core::nn::Checkpoint::load(&path).unwrap();
    let meta_len = serde_json::to_vec(&ckpt.metadata).unwrap().len();
    let mut expected = 4 + 4 + 4;
    for (name, p) in g.params().iter() {
        expected += 2 + name.len() + 1 + 4 * p.value.shape().len() + 1;
    }
    expected += 4 * param_count(g.params(), false);
    expected += 4 + meta_len;
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected);

    let (back, opt, meta) = NetworkModel::load(&path).unwrap();
    assert!(opt.is_none());
    assert_eq!(back.role, Role::Generator);
    assert!(back.params().bitwise_eq(g.params()));
    assert_eq!(meta["role"], "generator");
    assert_eq!(meta["epoch"], 3);
}

#[test]
fn checkpoint_without_role_is_rejected() {
    let g = build_generator();
    let ckpt = genmix_core::nn::Checkpoint::from_parts(g.params(), None, json!({}));
    assert!(NetworkModel::from_checkpoint(ckpt).is_err());
}
