use proptest::prelude::*;
use rainbow_lab::align;
use rainbow_lab::kernel::{self, GramOperator, GramSource};
use rainbow_lab::linalg::{self, Mat};
use rainbow_lab::rng;

fn gram(m: Mat) -> GramOperator {
    GramOperator {
        matrix: m,
        source: GramSource::Analytic,
    }
}

fn random_psd(seed: u64, n: usize, rank: usize) -> Mat {
    let f = linalg::gaussian_matrix(n, rank, &mut rng::stream(seed, "test", "psd", 0));
    &f * f.transpose() / rank as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn alignment_error_equals_bures_wasserstein(seed in any::<u64>(), n in 2usize..48, d in 1usize..16) {
        let mut r = rng::stream(seed, "test", "bw", 0);
        let x = linalg::gaussian_matrix(n, d, &mut r);
        let y = linalg::gaussian_matrix(n, d, &mut r);
        let e = align::procrustes_align(&x, &y).unwrap().error;
        let bw = kernel::bures_wasserstein(&kernel::empirical_gram(&y, 1), &kernel::empirical_gram(&x, 1)).unwrap();
        prop_assert!((e - bw).abs() <= 1e-6 * bw.max(1e-12), "error {} vs BW² {}", e, bw);
    }

    #[test]
    fn entropic_bound_dominates(seed in any::<u64>(), n in 2usize..24, k in 1usize..24, lexp in -3.0f64..1.0) {
        let a = gram(random_psd(seed, n, k));
        let b = gram(random_psd(seed.wrapping_add(1), n, k));
        let lambda = 10f64.powf(lexp);
        let bw = kernel::bures_wasserstein(&a, &b).unwrap();
        let bound = kernel::entropic_bw_bound(&a, &b, lambda).unwrap();
        prop_assert!(bound >= bw - 1e-12 * bw.max(1.0));
    }

    #[test]
    fn gram_and_covariance_spectra_coincide(seed in any::<u64>(), n in 2usize..30, d in 1usize..30) {
        let x = linalg::gaussian_matrix(n, d, &mut rng::stream(seed, "test", "dual", 0));
        let g = kernel::empirical_gram(&x, 1).eigenvalues().unwrap();
        let c = kernel::kpca(&x, Some(0)).unwrap().spectrum;
        for i in 0..n.min(d) {
            prop_assert!((g[i] - c[i]).abs() <= 1e-10 * g[0].max(1.0));
        }
    }

    #[test]
    fn arccos_kernel_is_symmetric_and_homogeneous(seed in any::<u64>(), s in 0.1f64..10.0, t in 0.1f64..10.0) {
        let mut r = rng::stream(seed, "test", "arccos", 0);
        let x = linalg::gaussian_matrix(1, 4, &mut r);
        let y = linalg::gaussian_matrix(1, 4, &mut r);
        let c = random_psd(seed, 4, 6);
        let k = kernel::arccos_kernel(x.as_slice(), y.as_slice(), &c).unwrap();
        let k2 = kernel::arccos_kernel(y.as_slice(), x.as_slice(), &c).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * t).collect();
        let k3 = kernel::arccos_kernel(&xs, &ys, &c).unwrap();
        prop_assert!((k - k2).abs() <= 1e-12 * k.abs().max(1.0));
        prop_assert!((k3 - s * t * k).abs() <= 1e-10 * (s * t * k).abs().max(1e-12));
    }
}

#[test]
fn kpca_coordinates_have_decreasing_diagonal_covariance() {
    let mut r = rng::stream(0, "test", "kpca", 0);
    let x = linalg::gaussian_matrix(200, 6, &mut r) * Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 0.5, 2.0, 1.0, 0.1, 1.5]));
    let k = kernel::kpca(&x, None).unwrap();
    let c = linalg::second_moment(&k.projected);
    for i in 0..6 {
        for j in 0..6 {
            if i != j {
                assert!(c[(i, j)].abs() < 1e-10);
            }
        }
        if i > 0 {
            assert!(c[(i, i)] <= c[(i - 1, i - 1)]);
        }
    }
}

#[test]
fn arccos_kernel_matches_monte_carlo() {
    let c = random_psd(5, 3, 4);
    let x = [1.0, -0.5, 0.3];
    let y = [0.2, 0.8, -1.0];
    let exact = kernel::arccos_kernel(&x, &y, &c).unwrap();
    let root = linalg::psd_sqrt(&c).unwrap();
    let n = 200_000;
    let w = linalg::gaussian_matrix(n, 3, &mut rng::stream(5, "test", "mc", 0)) * root;
    let xv = nalgebra::DVector::from_column_slice(&x);
    let yv = nalgebra::DVector::from_column_slice(&y);
    let a = (&w * xv).map(|v| v.max(0.0));
    let b = (&w * yv).map(|v| v.max(0.0));
    let prods: Vec<f64> = a.iter().zip(b.iter()).map(|(p, q)| p * q).collect();
    let mean = prods.iter().sum::<f64>() / n as f64;
    let var = prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - exact).abs() <= 3.0 * se, "MC {mean} vs exact {exact}, se {se}");
}

#[test]
fn gram_trace_is_bounded_by_input_energy() {
    let mut r = rng::stream(6, "test", "trace", 0);
    let x = linalg::gaussian_matrix(50, 5, &mut r);
    let c = random_psd(6, 5, 3);
    let root = linalg::psd_sqrt(&c).unwrap();
    let bound = linalg::operator_norm(&c).unwrap() * x.norm_squared() / 50.0;
    assert!(kernel::analytic_gram(&x, &c).unwrap().trace() <= bound);
    for width in [16usize, 64, 256, 1024] {
        let w = linalg::gaussian_matrix(width, 5, &mut r) * &root;
        let phi = (&x * w.transpose()).map(|v| v.max(0.0) / (width as f64).sqrt());
        assert!(kernel::empirical_gram(&phi, 1).trace() <= bound, "width {width}");
    }
}

#[test]
fn tail_bound_holds_on_power_laws() {
    for alpha in [1.5, 2.0, 3.0] {
        for c in [0.5, 1.0, 2.0] {
            let eigs: Vec<f64> = (1..=2000).map(|m| c * (m as f64).powf(-alpha)).collect();
            for e in -4..=1 {
                let t = kernel::spectral_tail_bound_check(&eigs, alpha, c, 10f64.powi(e)).unwrap();
                assert!(t.holds, "alpha {alpha}, c {c}, lambda 1e{e}: {} > {}", t.lhs, t.rhs);
            }
        }
    }
}

#[test]
fn powerlaw_fit_recovers_exponent() {
    let eigs: Vec<f64> = (1..=400).map(|m| 2.0 * (m as f64).powf(-1.3)).collect();
    let f = kernel::powerlaw_fit(&eigs, None).unwrap();
    assert!((f.alpha - 1.3).abs() < 1e-10);
    assert_eq!(f.fit_range, (8, 200));
}
