use proptest::prelude::*;
use rainbow_lab::data::{self, MixtureParams};
use rainbow_lab::linalg::{self, Mat};
use rainbow_lab::net::{self, Architecture, Init, TrainConfig};
use rainbow_lab::rainbow::{self, Classifier, RainbowModel};
use rainbow_lab::rng;

fn random_psd(d: usize, seed: u64) -> Mat {
    let g = linalg::gaussian_matrix(2 * d, d, &mut rng::stream(seed, "test", "psd", 0));
    g.tr_mul(&g) / (2 * d) as f64
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_estimate_is_symmetric_psd(rows in 1usize..20, cols in 1usize..12, seed in 0u64..1000) {
        let w = linalg::gaussian_matrix(rows, cols, &mut rng::stream(seed, "test", "w", 0));
        let c = rainbow::estimate_layer_covariance(&w);
        prop_assert!((&c - c.transpose()).abs().max() <= 1e-12);
        let eig = linalg::sym_eigen(&c).unwrap();
        prop_assert!(eig.values.iter().all(|&v| v >= -1e-10 * linalg::trace(&c).max(1.0)));
        let direct = w.transpose() * &w / rows as f64;
        prop_assert!((&c - direct).abs().max() <= 1e-12);
    }

    #[test]
    fn aligning_with_square_rotation_preserves_trace(d in 1usize..16, seed in 0u64..1000) {
        let c = random_psd(d, seed);
        let q = linalg::random_orthogonal(d, &mut rng::stream(seed, "test", "q", 0));
        let aligned = rainbow::align_covariance_to_reference(&c, &q).unwrap();
        prop_assert!((linalg::trace(&aligned) - linalg::trace(&c)).abs() <= 1e-10 * linalg::trace(&c).max(1.0));
    }

    #[test]
    fn explained_variance_is_monotone_in_rank(rows in 1usize..20, d in 1usize..12, seed in 0u64..1000) {
        let mut r = rng::stream(seed, "test", "proj", 0);
        let w = linalg::gaussian_matrix(rows, d, &mut r);
        let basis = linalg::random_orthogonal(d, &mut r);
        let mut prev = 0.0;
        for k in 0..=d {
            let (_, ratio) = rainbow::project_weights_rank(&w, &basis, k).unwrap();
            prop_assert!(ratio >= prev - 1e-12);
            prev = ratio;
        }
        prop_assert!((prev - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn whitening_inverts_covariance_factor(width in 4usize..40, d in 1usize..10, seed in 0u64..1000) {
        let c = random_psd(d, seed);
        let root = linalg::psd_sqrt(&c).unwrap();
        let g = linalg::gaussian_matrix(width, d, &mut rng::stream(seed, "test", "g", 0));
        let w = &g * &root;
        let white = rainbow::whiten_weights(&w, &c, rainbow::WHITEN_CUTOFF).unwrap();
        prop_assert_eq!(white.effective_rank, d);
        prop_assert!((&white.matrix - &g).abs().max() <= 1e-6 * g.abs().max().max(1.0));
    }
}

#[test]
fn covariance_estimate_converges_at_root_width_rate() {
    let d = 16;
    let c = random_psd(d, 3);
    let root = linalg::psd_sqrt(&c).unwrap();
    let norm = linalg::frobenius(&c);
    let widths: Vec<usize> = (6..=12).map(|k| 1usize << k).collect();
    let mut logs_w = Vec::new();
    let mut logs_e = Vec::new();
    for &w in &widths {
        let draws = 8;
        let mut err = 0.0;
        for s in 0..draws {
            let g = linalg::gaussian_matrix(w, d, &mut rng::stream(s, "test", "rate", w as u64));
            let est = rainbow::estimate_layer_covariance(&(g * &root));
            err += linalg::frobenius(&(est - &c)) / norm;
        }
        logs_w.push((w as f64).ln());
        logs_e.push((err / draws as f64).ln());
    }
    let s = slope(&logs_w, &logs_e);
    assert!((s + 0.5).abs() <= 0.1, "slope {s}");
}

/// Sampling in a rotated reference basis with a conjugated covariance gives
/// first-layer Grams with the same distribution.
#[test]
fn rotated_reference_basis_gives_same_gram_distribution() {
    let (n, d, width, seeds) = (6, 5, 64, 20);
    let phi = linalg::gaussian_matrix(n, d, &mut rng::stream(0, "test", "phi", 0));
    let c = random_psd(d, 1);
    let q = linalg::random_orthogonal(d, &mut rng::stream(0, "test", "q", 0));
    let phi_rot = &phi * q.transpose();
    let c_rot = &q * &c * q.transpose();
    let gram = |coords: &Mat, cov: &Mat, seed: u64, purpose: &str| {
        let g = linalg::gaussian_matrix(width, d, &mut rng::stream(seed, "test", purpose, 0));
        let w = g * linalg::psd_sqrt(cov).unwrap();
        let a = (coords * w.transpose()).map(|v| v.max(0.0));
        &a * a.transpose() / width as f64
    };
    let plain: Vec<Mat> = (0..seeds).map(|s| gram(&phi, &c, s, "plain")).collect();
    let rotated: Vec<Mat> = (0..seeds).map(|s| gram(&phi_rot, &c_rot, s, "rotated")).collect();
    let mean = |gs: &[Mat]| gs.iter().fold(Mat::zeros(n, n), |acc, g| acc + g) / gs.len() as f64;
    let (m1, m2) = (mean(&plain), mean(&rotated));
    for i in 0..n {
        for k in 0..n {
            let var = |gs: &[Mat], m: &Mat| {
                gs.iter().map(|g| (g[(i, k)] - m[(i, k)]).powi(2)).sum::<f64>() / (gs.len() - 1) as f64
            };
            let se = ((var(&plain, &m1) + var(&rotated, &m2)) / seeds as f64).sqrt();
            assert!(
                (m1[(i, k)] - m2[(i, k)]).abs() <= 3.0 * se + 1e-12,
                "entry ({i},{k}): {} vs {} (se {se})",
                m1[(i, k)],
                m2[(i, k)]
            );
        }
    }
}

fn small_model() -> (RainbowModel, data::Dataset) {
    let ds = data::generate_gaussian_mixture(
        &MixtureParams {
            d0: 8,
            n_classes: 3,
            n_per_class: 60,
            separation: 3.0,
            test_fraction: 0.3,
        },
        5,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let train = |width: usize, seed: u64| {
        let arch = Architecture::mlp(8, &[width, width], 3, true);
        let init = net::init_network(&arch, Init::Gaussian, seed).unwrap();
        net::train_sgd(&init, &ds, &TrainConfig { seed, ..cfg.clone() }).unwrap().0
    };
    let reference = train(32, 100);
    let sources = [train(16, 1), train(16, 2)];
    let refs: Vec<_> = sources.iter().collect();
    let model = RainbowModel::build(&reference, &refs, &ds.train().inputs).unwrap();
    (model, ds)
}

#[test]
fn model_covariances_are_symmetric_psd_and_bases_orthonormal() {
    let (model, _) = small_model();
    for layer in &model.layers {
        let c = &layer.covariance;
        assert!((c - c.transpose()).abs().max() <= 1e-10);
        let eig = linalg::sym_eigen(c).unwrap();
        assert!(eig.values.iter().all(|&v| v >= -1e-10 * linalg::trace(c)));
        let b = &layer.basis;
        assert!((b.tr_mul(b) - Mat::identity(b.ncols(), b.ncols())).abs().max() <= 1e-10);
    }
    for j in 1..model.depth() {
        assert_eq!(model.layers[j].covariance.nrows(), model.layers[j - 1].rank());
    }
}

#[test]
fn sampling_is_deterministic_and_round_trips_through_disk() {
    let (model, ds) = small_model();
    let (a, ma) = rainbow::sample_rainbow_network(&model, &[24, 24], &ds, 9, Classifier::Realign).unwrap();
    let (b, mb) = rainbow::sample_rainbow_network(&model, &[24, 24], &ds, 9, Classifier::Realign).unwrap();
    assert_eq!(rainbow::network_hash(&a), rainbow::network_hash(&b));
    assert_eq!(ma, mb);
    let (c, _) = rainbow::sample_rainbow_network(&model, &[24, 24], &ds, 10, Classifier::Realign).unwrap();
    assert_ne!(rainbow::network_hash(&a), rainbow::network_hash(&c));

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = RainbowModel::load(dir.path()).unwrap();
    let (d, _) = rainbow::sample_rainbow_network(&loaded, &[24, 24], &ds, 9, Classifier::Realign).unwrap();
    assert_eq!(rainbow::network_hash(&a), rainbow::network_hash(&d));
}

#[test]
fn sampling_rejects_bad_widths() {
    let (model, ds) = small_model();
    assert!(rainbow::sample_rainbow_network(&model, &[8], &ds, 0, Classifier::Realign).is_err());
    assert!(rainbow::sample_rainbow_network(&model, &[0, 8], &ds, 0, Classifier::Realign).is_err());
    assert!(rainbow::sample_rainbow_network(&model, &[8, 1000], &ds, 0, Classifier::Realign).is_err());
}

#[test]
fn white_gaussian_matrices_fit_marchenko_pastur() {
    for seed in 0..3 {
        let g = linalg::gaussian_matrix(600, 150, &mut rng::stream(seed, "test", "mp", 0));
        let rep = rainbow::mp_spectrum_test(&g, None, rainbow::MP_MARGIN).unwrap();
        assert!(rep.outlier_fraction <= 0.02, "seed {seed}: {}", rep.outlier_fraction);
    }
}

#[test]
fn planted_spike_is_an_outlier() {
    let (n, d) = (600, 150);
    let mut r = rng::stream(0, "test", "spike", 0);
    let mut g = linalg::gaussian_matrix(n, d, &mut r);
    let u = linalg::random_orthonormal_columns(d, 1, &mut r);
    let z = linalg::gaussian_matrix(n, 1, &mut r);
    g += z * u.transpose() * 4.0;
    let rep = rainbow::mp_spectrum_test(&g, Some(1.0), rainbow::MP_MARGIN).unwrap();
    assert!(rep.n_above >= 1);
}

#[test]
fn ks_statistic_separates_gaussian_from_uniform() {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng::stream(0, "test", "ks", 0);
    let normal: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut r)).collect();
    let crit = rainbow::ks_critical_1pct(normal.len());
    assert!(rainbow::ks_statistic(&normal) < crit);
    let uniform: Vec<f64> = (0..2000).map(|i| -2.0 + 4.0 * i as f64 / 2000.0).collect();
    assert!(rainbow::ks_statistic(&uniform) > crit);
}
