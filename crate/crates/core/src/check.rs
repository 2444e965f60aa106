//! Quick invariant suite behind `rainbow-lab check`.

use crate::align;
use crate::data::{self, MixtureParams};
use crate::equivariance::{self, AnalyticRainbowKernel};
use crate::error::Result;
use crate::experiment::report::Check;
use crate::kernel;
use crate::linalg::{self, Mat};
use crate::net::{self, Architecture, Init, TrainConfig};
use crate::rainbow;
use crate::rng;

fn guarded(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check::new(name, passed, detail),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

fn procrustes() -> Result<(bool, String)> {
    let mut worst_gap = 0.0_f64;
    let mut beaten = 0;
    for t in 0..50u64 {
        let mut r = rng::stream(t, "check", "procrustes", 0);
        let x = linalg::gaussian_matrix(64, 8, &mut r);
        let y = linalg::gaussian_matrix(64, 8, &mut r);
        let a = align::procrustes_align(&x, &y)?;
        let scale = a.error_terms.trace_hat + a.error_terms.trace_ref;
        worst_gap = worst_gap.max((a.error - a.direct_error).abs() / scale);
        for _ in 0..10 {
            let q = linalg::random_orthogonal(8, &mut r);
            let e = (&y * q.transpose() - &x).norm_squared() / 64.0;
            if e < a.direct_error - 1e-12 {
                beaten += 1;
            }
        }
    }
    Ok((
        worst_gap <= 1e-8 && beaten == 0,
        format!("max relative decomposition gap {worst_gap:e}, {beaten} better competitors"),
    ))
}

fn bw_identity() -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    for t in 0..20u64 {
        let mut r = rng::stream(t, "check", "bw", 0);
        let x = linalg::gaussian_matrix(24, 6, &mut r);
        let y = linalg::gaussian_matrix(24, 6, &mut r);
        let a = align::procrustes_align(&x, &y)?;
        let bw = kernel::bures_wasserstein(&kernel::empirical_gram(&y, 1), &kernel::empirical_gram(&x, 1))?;
        let bound = kernel::entropic_bw_bound(&kernel::empirical_gram(&y, 1), &kernel::empirical_gram(&x, 1), 0.1)?;
        if bound < bw {
            return Ok((false, format!("entropic bound {bound} below BW² {bw}")));
        }
        worst = worst.max((a.error - bw).abs() / bw.max(1e-300));
    }
    Ok((worst <= 1e-6, format!("max relative gap {worst:e}")))
}

fn small_dataset() -> Result<data::Dataset> {
    data::generate_gaussian_mixture(
        &MixtureParams {
            d0: 6,
            n_classes: 3,
            n_per_class: 40,
            separation: 2.0,
            test_fraction: 0.5,
        },
        0,
    )
}

fn gradients() -> Result<(bool, String)> {
    let ds = small_dataset()?;
    let arch = Architecture::mlp(6, &[8, 8], 3, true);
    let net = net::init_network(&arch, Init::Gaussian, 1)?;
    let err = net::gradient_check(&net, &ds.train(), 1e-5, 2)?;
    Ok((err <= 1e-4, format!("max relative error {err:e}")))
}

fn determinism() -> Result<(bool, String)> {
    let ds = small_dataset()?;
    let arch = Architecture::mlp(6, &[8], 3, true);
    let net0 = net::init_network(&arch, Init::Gaussian, 3)?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let a = net::train_sgd(&net0, &ds, &cfg)?.0;
    let b = net::train_sgd(&net0, &ds, &cfg)?.0;
    let (ha, hb) = (rainbow::network_hash(&a), rainbow::network_hash(&b));
    Ok((ha == hb, format!("hashes {}… and {}…", &ha[..12], &hb[..12])))
}

fn marchenko_pastur() -> Result<(bool, String)> {
    let mut r = rng::stream(0, "check", "mp", 0);
    let g = linalg::gaussian_matrix(800, 200, &mut r);
    let rep = rainbow::mp_spectrum_test(&g, None, rainbow::MP_MARGIN)?;
    Ok((rep.outlier_fraction <= 0.02, format!("outlier fraction {:.4}", rep.outlier_fraction)))
}

fn invariance() -> Result<(bool, String)> {
    let d = 6;
    let gens: Vec<Mat> = (0..3).map(|k| equivariance::sign_flip(d, k)).collect();
    let group = equivariance::close_group(&gens, 64)?;
    let mut r = rng::stream(0, "check", "invariance", 0);
    let w = linalg::gaussian_matrix(10, d, &mut r);
    let c = equivariance::symmetrize_covariance(&rainbow::estimate_layer_covariance(&w), &group)?;
    let k = AnalyticRainbowKernel { c1: c, depth: 3 };
    let rep = equivariance::test_kernel_invariance(&k, &group, 20, 0)?;
    let worst = rep.max_deviation.iter().copied().fold(0.0, f64::max);
    Ok((worst <= 1e-10, format!("max deviation {worst:e} over {} elements", group.order())))
}

/// Runs every quick check; failures are reported, never raised.
pub fn run_all() -> Vec<Check> {
    vec![
        guarded("Procrustes error identity and optimality", procrustes),
        guarded("alignment error equals Bures-Wasserstein², entropic bound dominates", bw_identity),
        guarded("backpropagation matches finite differences", gradients),
        guarded("training is bit-reproducible", determinism),
        guarded("white Gaussian matrix fits Marchenko-Pastur", marchenko_pastur),
        guarded("analytic kernel invariant under sign flips", invariance),
    ]
}
