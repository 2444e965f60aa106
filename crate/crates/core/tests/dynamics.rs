use proptest::prelude::*;
use rainbow_lab::dynamics::{self, RankStatus};
use rainbow_lab::linalg::{self, Mat};
use rainbow_lab::net::{Snapshot, TrainConfig, TrainTrajectory};
use rainbow_lab::rng;

fn trajectory(weights: Vec<Mat>) -> TrainTrajectory {
    TrainTrajectory {
        snapshots: weights
            .into_iter()
            .enumerate()
            .map(|(t, w)| Snapshot {
                epoch: 5 * t,
                weights: vec![w],
            })
            .collect(),
        config: TrainConfig::default(),
    }
}

/// `W(t) = W(0) B diag(a(t)) Bᵀ`.
fn amplified(w0: &Mat, basis: &Mat, schedule: &[Vec<f64>]) -> Vec<Mat> {
    schedule
        .iter()
        .map(|a| w0 * basis * Mat::from_diagonal(&linalg::Vector::from_vec(a.clone())) * basis.transpose())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pure_amplification_is_recovered(
        n in 2usize..30,
        d in 1usize..10,
        steps in 1usize..6,
        seed in 0u64..1000,
    ) {
        let mut r = rng::stream(seed, "test", "amp", 0);
        let w0 = linalg::gaussian_matrix(n, d, &mut r);
        let basis = linalg::random_orthogonal(d, &mut r);
        let mut schedule = vec![vec![1.0; d]];
        for t in 0..steps {
            schedule.push((0..d).map(|k| 0.1 + ((seed as usize + 3 * k + 7 * t) % 17) as f64 * 0.4).collect());
        }
        let traj = trajectory(amplified(&w0, &basis, &schedule));
        let ranks: Vec<usize> = (1..=d).collect();
        let proj = dynamics::neuron_projections(&traj, 1, &basis, &ranks).unwrap();
        for (k, u) in proj.iter().enumerate() {
            let s = dynamics::amplification_and_cosine(u, k + 1);
            prop_assert_eq!(s.status, RankStatus::Ok);
            prop_assert_eq!(s.amplification[0], 1.0);
            prop_assert_eq!(s.cosine[0], Some(1.0));
            for (t, a) in schedule.iter().enumerate() {
                prop_assert!((s.amplification[t] - a[k]).abs() <= 1e-10 * a[k].max(1.0));
                prop_assert!((s.cosine[t].unwrap() - 1.0).abs() <= 1e-10);
            }
        }
        let last = traj.snapshots.last().unwrap().epoch;
        let res = dynamics::covariance_reconstruction_check(&traj, 1, &basis, last).unwrap();
        prop_assert!(res <= 1e-10, "residual {}", res);
    }

    #[test]
    fn cosines_bounded_and_amplifications_nonnegative(n in 1usize..20, d in 1usize..8, seed in 0u64..1000) {
        let mut r = rng::stream(seed, "test", "bounds", 0);
        let ws: Vec<Mat> = (0..4).map(|_| linalg::gaussian_matrix(n, d, &mut r)).collect();
        let rep = dynamics::analyze_layer(&trajectory(ws), 1, None).unwrap();
        for s in &rep.series {
            prop_assert_eq!(s.amplification[0], 1.0);
            prop_assert_eq!(s.cosine[0], Some(1.0));
            prop_assert!(s.amplification.iter().all(|&a| a >= 0.0));
            prop_assert!(s.cosine.iter().flatten().all(|c| c.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn projections_match_brute_force(n in 1usize..12, d in 1usize..8, seed in 0u64..1000) {
        let mut r = rng::stream(seed, "test", "brute", 0);
        let ws: Vec<Mat> = (0..3).map(|_| linalg::gaussian_matrix(n, d, &mut r)).collect();
        let basis = linalg::random_orthogonal(d, &mut r);
        let ranks: Vec<usize> = (1..=d).collect();
        let traj = trajectory(ws.clone());
        let proj = dynamics::neuron_projections(&traj, 1, &basis, &ranks).unwrap();
        for (k, per_t) in proj.iter().enumerate() {
            for (t, u) in per_t.iter().enumerate() {
                for i in 0..n {
                    let mut dot = 0.0;
                    for m in 0..d {
                        dot += ws[t][(i, m)] * basis[(m, k)];
                    }
                    prop_assert!((u[i] - dot).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn amplifications_within_degenerate_blocks_are_basis_invariant() {
    let (n, d) = (20, 5);
    let mut r = rng::stream(0, "test", "blocks", 0);
    let w0 = linalg::gaussian_matrix(n, d, &mut r);
    let basis = linalg::random_orthogonal(d, &mut r);
    let blocks = [0..2, 2..5];
    let schedule: Vec<Vec<f64>> = [1.0, 1.7, 0.4]
        .iter()
        .map(|&s| vec![s, s, 2.0 * s, 2.0 * s, 2.0 * s])
        .collect();
    let traj = trajectory(amplified(&w0, &basis, &schedule));
    let mut q = Mat::zeros(d, d);
    for b in &blocks {
        let m = b.len();
        q.view_mut((b.start, b.start), (m, m))
            .copy_from(&linalg::random_orthogonal(m, &mut r));
    }
    let mixed = &basis * q;
    let ranks: Vec<usize> = (1..=d).collect();
    let amps = |b: &Mat| -> Vec<Vec<f64>> {
        dynamics::neuron_projections(&traj, 1, b, &ranks)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(k, u)| dynamics::amplification_and_cosine(u, k + 1).amplification)
            .collect()
    };
    let (a, b) = (amps(&basis), amps(&mixed));
    for block in &blocks {
        for t in 0..schedule.len() {
            let mut x: Vec<f64> = block.clone().map(|k| a[k][t]).collect();
            let mut y: Vec<f64> = block.clone().map(|k| b[k][t]).collect();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn unchanged_weights_give_constant_projections() {
    let w = linalg::gaussian_matrix(6, 4, &mut rng::stream(0, "test", "const", 0));
    let traj = trajectory(vec![w.clone(), w.clone(), w]);
    let rep = dynamics::analyze_layer(&traj, 1, None).unwrap();
    for s in &rep.series {
        assert!(s.amplification.iter().all(|&a| a == 1.0));
    }
    assert!(rep.residuals.iter().all(|&r| r <= 1e-14));
    assert!(rep.baseline_residuals.iter().all(|&r| r == 0.0));
}

#[test]
fn canonical_basis_projections_are_columns() {
    let w = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let traj = trajectory(vec![w.clone()]);
    let proj = dynamics::neuron_projections(&traj, 1, &Mat::identity(3, 3), &[1, 2, 3]).unwrap();
    for k in 0..3 {
        assert_eq!(proj[k][0], w.column(k).into_owned());
    }
}

#[test]
fn independent_weights_have_small_cosines() {
    let (n, d) = (400, 8);
    let mut r = rng::stream(0, "test", "indep", 0);
    let ws: Vec<Mat> = (0..2).map(|_| linalg::gaussian_matrix(n, d, &mut r)).collect();
    let rep = dynamics::analyze_layer(&trajectory(ws), 1, None).unwrap();
    for s in &rep.series {
        assert!(s.cosine[1].unwrap().abs() <= 0.15, "rank {}: {:?}", s.rank, s.cosine);
    }
}

#[test]
fn zero_initial_projection_is_flagged() {
    let w0 = Mat::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    let w1 = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let traj = trajectory(vec![w0, w1]);
    let proj = dynamics::neuron_projections(&traj, 1, &Mat::identity(2, 2), &[2]).unwrap();
    let s = dynamics::amplification_and_cosine(&proj[0], 2);
    assert_eq!(s.status, RankStatus::ZeroInitialNorm);
    assert!(s.amplification.is_empty());
}

#[test]
fn invalid_requests_are_errors() {
    let w = linalg::gaussian_matrix(3, 3, &mut rng::stream(0, "test", "err", 0));
    let traj = trajectory(vec![w.clone(), w]);
    let basis = Mat::identity(3, 3);
    assert!(dynamics::neuron_projections(&traj, 2, &basis, &[1]).is_err());
    assert!(dynamics::neuron_projections(&traj, 0, &basis, &[1]).is_err());
    assert!(dynamics::neuron_projections(&traj, 1, &basis, &[4]).is_err());
    assert!(dynamics::covariance_reconstruction_check(&traj, 1, &basis, 3).is_err());
    let empty = trajectory(Vec::new());
    assert!(dynamics::analyze_layer(&empty, 1, None).is_err());
}
