use proptest::prelude::*;
use rainbow_lab::data::{self, MixtureParams};
use rainbow_lab::linalg::{self, Mat};
use rainbow_lab::net::{self, Architecture, Init, Network, Nonlinearity, Prior, TrainConfig};
use rainbow_lab::rainbow::network_hash;
use rainbow_lab::rng;

fn dataset(d0: usize, n: usize) -> data::Dataset {
    data::generate_gaussian_mixture(
        &MixtureParams {
            d0,
            n_classes: 3,
            n_per_class: n,
            separation: 2.0,
            test_fraction: 0.5,
        },
        7,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradients_match_finite_differences(w1 in 2usize..9, w2 in 2usize..9, std in any::<bool>(), seed in 0u64..1000) {
        let ds = dataset(5, 10);
        let arch = Architecture::mlp(5, &[w1, w2], 3, std);
        let net = net::init_network(&arch, Init::Gaussian, seed).unwrap();
        let err = net::gradient_check(&net, &ds.train(), 1e-5, seed).unwrap();
        prop_assert!(err <= 1e-4, "relative error {}", err);
    }

    #[test]
    fn relu_nets_are_positively_homogeneous(c in 0.01f64..50.0, seed in 0u64..1000) {
        let arch = Architecture::mlp(4, &[6, 5, 7], 2, false);
        let net = net::init_network(&arch, Init::UniformKaiming, seed).unwrap();
        let x = linalg::gaussian_matrix(9, 4, &mut rng::stream(seed, "test", "x", 0));
        let a = net.forward(&x, None).unwrap();
        let b = net.forward(&(&x * c), None).unwrap();
        for (p, q) in a.iter().zip(&b) {
            let scale = p.abs().max().max(1.0);
            prop_assert!((p * c - q).abs().max() <= 1e-12 * c.max(1.0) * scale);
        }
    }
}

#[test]
fn normalization_contract_after_freezing_stats() {
    let ds = dataset(6, 60);
    let arch = Architecture::mlp(6, &[16, 8], 3, true);
    let mut net = net::init_network(&arch, Init::Gaussian, 1).unwrap();
    let train = ds.train();
    net.fit_norm_stats(&train.inputs).unwrap();
    for a in net.forward(&train.inputs, None).unwrap() {
        let (n, d) = a.shape();
        for u in 0..d {
            let col = a.column(u);
            let m = col.sum() / n as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            assert!(m.abs() <= 1e-6);
            assert!((v - 1.0 / d as f64).abs() <= 1e-4, "unit {u}: variance {v}");
        }
    }
}

#[test]
fn forward_does_not_mutate() {
    let ds = dataset(4, 20);
    let mut net = net::init_network(&Architecture::mlp(4, &[8], 3, true), Init::Gaussian, 2).unwrap();
    net.fit_norm_stats(&ds.train().inputs).unwrap();
    let before = network_hash(&net);
    let stats = net.norm_stats().map(|s| s.to_vec());
    net.forward(&ds.train().inputs, None).unwrap();
    net.accuracy(&ds.test()).unwrap();
    assert_eq!(before, network_hash(&net));
    assert_eq!(stats, net.norm_stats().map(|s| s.to_vec()));
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let ds = dataset(4, 20);
    let net0 = net::init_network(&Architecture::mlp(4, &[8, 8], 3, false), Init::Gaussian, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        lr: net::LrSchedule::constant(0.0),
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (net, traj, _) = net::train_sgd(&net0, &ds, &cfg).unwrap();
    assert_eq!(net.all_weights(), net0.all_weights());
    assert_eq!(traj.snapshots.first().unwrap().epoch, 0);
    assert_eq!(traj.snapshots.last().unwrap().epoch, 2);
}

#[test]
fn training_is_byte_reproducible() {
    let ds = dataset(4, 30);
    let net0 = net::init_network(&Architecture::mlp(4, &[12, 12], 3, true), Init::Gaussian, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        snapshot_every: 2,
        ..TrainConfig::default()
    };
    let (a, ta, ma) = net::train_sgd(&net0, &ds, &cfg).unwrap();
    let (b, tb, mb) = net::train_sgd(&net0, &ds, &cfg).unwrap();
    assert_eq!(network_hash(&a), network_hash(&b));
    assert_eq!(ta.snapshots, tb.snapshots);
    assert_eq!(ma.epoch_loss, mb.epoch_loss);
}

#[test]
fn training_learns_separable_mixture() {
    let ds = dataset(8, 100);
    let net0 = net::init_network(&Architecture::mlp(8, &[32, 32], 3, true), Init::Gaussian, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (_, _, m) = net::train_sgd(&net0, &ds, &cfg).unwrap();
    assert!(m.train_accuracy > 0.9, "train accuracy {}", m.train_accuracy);
    assert!(m.epoch_loss.last() < m.epoch_loss.first());
}

#[test]
fn save_load_round_trip() {
    let net = net::init_network(&Architecture::mlp(3, &[5, 4], 2, true), Init::Gaussian, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    net.save(dir.path()).unwrap();
    let back = Network::load(dir.path()).unwrap();
    assert_eq!(network_hash(&net), network_hash(&back));
    assert_eq!(net.norm_stats(), back.norm_stats());
}

#[test]
fn standard_convention_round_trip() {
    let net = net::init_network(&Architecture::mlp(3, &[5, 4], 2, false), Init::Gaussian, 8).unwrap();
    let (w, r) = net.to_standard();
    let back = Network::normalize_convention(net.arch().clone(), &w, &r, None).unwrap();
    let x = linalg::gaussian_matrix(6, 3, &mut rng::stream(0, "test", "x", 0));
    let d = net.logits(&x).unwrap() - back.logits(&x).unwrap();
    assert!(d.abs().max() < 1e-12);
}

#[test]
fn patch_prior_gradients() {
    let ds = dataset(12, 6);
    let mut arch = Architecture::mlp(12, &[6, 5], 3, true);
    arch.layers[0].prior = Prior::Patch {
        channels: 1,
        window: 4,
        stride: 2,
    };
    arch.layers[1].in_dim = arch.layers[0].activation_dim();
    arch.validate().unwrap();
    let net = net::init_network(&arch, Init::Gaussian, 9).unwrap();
    let err = net::gradient_check(&net, &ds.train(), 1e-5, 1).unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn identity_layers_are_linear() {
    let mut arch = Architecture::mlp(3, &[4], 2, false);
    arch.layers[0].nonlinearity = Nonlinearity::Identity;
    let net = net::init_network(&arch, Init::Gaussian, 10).unwrap();
    let x = linalg::gaussian_matrix(5, 3, &mut rng::stream(0, "test", "x", 0));
    let a = net.forward(&x, None).unwrap().remove(0);
    let b = net.forward(&(-&x), None).unwrap().remove(0);
    assert!((a + b).abs().max() < 1e-12);
    let _: &Mat = net.readout();
}
