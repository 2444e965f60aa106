//! Per-direction decomposition of weight trajectories.
//!
//! For a fixed orthonormal basis `(e_r)` of a layer's input space,
//! `u_r(t) = W(t) e_r` collects the projections of all neuron weights.
//! Training is summarized by `a_r(t) = ‖u_r(t)‖/‖u_r(0)‖` and the cosine
//! `c_r(t)` between `u_r(t)` and `u_r(0)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::net::{Snapshot, TrainTrajectory};
use crate::rainbow;

/// Ranks analyzed when none are given.
pub const DEFAULT_RANKS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankStatus {
    Ok,
    /// `‖u_r(0)‖ = 0`, amplification undefined.
    ZeroInitialNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSeries {
    pub rank: usize,
    pub status: RankStatus,
    /// One entry per snapshot; empty when the rank is skipped.
    pub amplification: Vec<f64>,
    /// `None` where `‖u_r(t)‖ = 0`.
    pub cosine: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsReport {
    /// 1-based layer index.
    pub layer: usize,
    pub epochs: Vec<usize>,
    pub series: Vec<RankSeries>,
    /// `‖W(t) − W(0) B diag(a(t)) Bᵀ‖_F / ‖W(t)‖_F` per snapshot, over the
    /// full basis.
    pub residuals: Vec<f64>,
    /// `‖W(t) − W(0)‖_F / ‖W(t)‖_F` per snapshot.
    pub baseline_residuals: Vec<f64>,
}

fn layer_weights(snapshot: &Snapshot, layer: usize) -> Result<&Mat> {
    snapshot.weights.get(layer - 1).ok_or_else(|| {
        Error::Trajectory(format!("snapshot at epoch {} has no layer {layer}", snapshot.epoch))
    })
}

fn check_layer(traj: &TrainTrajectory, layer: usize) -> Result<()> {
    if traj.snapshots.is_empty() {
        return Err(Error::Trajectory("empty trajectory".into()));
    }
    if layer == 0 {
        return Err(Error::Trajectory("layers are 1-based".into()));
    }
    for s in &traj.snapshots {
        layer_weights(s, layer)?;
    }
    Ok(())
}

/// `u_r(t)` for each requested 1-based rank (outer) and snapshot (inner).
pub fn neuron_projections(
    traj: &TrainTrajectory,
    layer: usize,
    basis: &Mat,
    ranks: &[usize],
) -> Result<Vec<Vec<Vector>>> {
    check_layer(traj, layer)?;
    let d = layer_weights(&traj.snapshots[0], layer)?.ncols();
    if basis.nrows() != d {
        return Err(Error::shape(format!("basis has {} rows, weights have {d} columns", basis.nrows())));
    }
    ranks
        .iter()
        .map(|&r| {
            if r == 0 || r > basis.ncols() {
                return Err(Error::param(format!("rank {r} outside basis")));
            }
            let e = basis.column(r - 1);
            traj.snapshots
                .iter()
                .map(|s| Ok(layer_weights(s, layer)? * e))
                .collect()
        })
        .collect()
}

/// Amplification and cosine series of one `u_r(·)`.
pub fn amplification_and_cosine(series: &[Vector], rank: usize) -> RankSeries {
    let Some(u0) = series.first() else {
        return RankSeries {
            rank,
            status: RankStatus::Ok,
            amplification: Vec::new(),
            cosine: Vec::new(),
        };
    };
    let n0 = u0.norm();
    if n0 == 0.0 {
        return RankSeries {
            rank,
            status: RankStatus::ZeroInitialNorm,
            amplification: Vec::new(),
            cosine: Vec::new(),
        };
    }
    let mut amplification = Vec::with_capacity(series.len());
    let mut cosine = Vec::with_capacity(series.len());
    for (t, u) in series.iter().enumerate() {
        if t == 0 {
            amplification.push(1.0);
            cosine.push(Some(1.0));
            continue;
        }
        let n = u.norm();
        amplification.push(n / n0);
        cosine.push(if n > 0.0 {
            Some((u.dot(u0) / (n * n0)).clamp(-1.0, 1.0))
        } else {
            None
        });
    }
    RankSeries {
        rank,
        status: RankStatus::Ok,
        amplification,
        cosine,
    }
}

fn snapshot_index(traj: &TrainTrajectory, epoch: usize) -> Result<usize> {
    traj.snapshots
        .iter()
        .position(|s| s.epoch == epoch)
        .ok_or_else(|| Error::Trajectory(format!("no snapshot at epoch {epoch}")))
}

fn residual_at(w0: &Mat, wt: &Mat, basis: &Mat) -> f64 {
    let norm_t = linalg::frobenius(wt);
    if norm_t == 0.0 {
        return 0.0;
    }
    let u0 = w0 * basis;
    let ut = wt * basis;
    let mut scaled = u0.clone();
    for r in 0..basis.ncols() {
        let n0 = u0.column(r).norm();
        let a = if n0 > 0.0 { ut.column(r).norm() / n0 } else { 1.0 };
        scaled.column_mut(r).scale_mut(a);
    }
    linalg::frobenius(&(wt - scaled * basis.transpose())) / norm_t
}

/// Relative residual of the pure-amplification model at snapshot epoch `t`.
pub fn covariance_reconstruction_check(
    traj: &TrainTrajectory,
    layer: usize,
    basis: &Mat,
    epoch: usize,
) -> Result<f64> {
    check_layer(traj, layer)?;
    let idx = snapshot_index(traj, epoch)?;
    let w0 = layer_weights(&traj.snapshots[0], layer)?;
    let wt = layer_weights(&traj.snapshots[idx], layer)?;
    if basis.nrows() != w0.ncols() {
        return Err(Error::shape("basis does not match weight columns"));
    }
    Ok(residual_at(w0, wt, basis))
}

/// Eigenbasis of `Ĉ = WᵀW/d` at the last snapshot.
pub fn final_covariance_basis(traj: &TrainTrajectory, layer: usize) -> Result<(Mat, Vec<f64>)> {
    check_layer(traj, layer)?;
    let last = traj.snapshots.last().expect("non-empty");
    let eig = linalg::sym_eigen(&rainbow::estimate_layer_covariance(layer_weights(last, layer)?))?;
    Ok((eig.vectors, eig.values))
}

/// Full analysis of one layer in the final-covariance eigenbasis. `ranks`
/// defaults to the top [`DEFAULT_RANKS`].
pub fn analyze_layer(traj: &TrainTrajectory, layer: usize, ranks: Option<&[usize]>) -> Result<DynamicsReport> {
    let (basis, _) = final_covariance_basis(traj, layer)?;
    let default: Vec<usize> = (1..=DEFAULT_RANKS.min(basis.ncols())).collect();
    let ranks = ranks.unwrap_or(&default);
    let proj = neuron_projections(traj, layer, &basis, ranks)?;
    let series = proj
        .iter()
        .zip(ranks)
        .map(|(u, &r)| amplification_and_cosine(u, r))
        .collect();
    let w0 = layer_weights(&traj.snapshots[0], layer)?;
    let mut residuals = Vec::new();
    let mut baseline = Vec::new();
    for s in &traj.snapshots {
        let wt = layer_weights(s, layer)?;
        residuals.push(residual_at(w0, wt, &basis));
        let n = linalg::frobenius(wt);
        baseline.push(if n > 0.0 { linalg::frobenius(&(wt - w0)) / n } else { 0.0 });
    }
    Ok(DynamicsReport {
        layer,
        epochs: traj.snapshots.iter().map(|s| s.epoch).collect(),
        series,
        residuals,
        baseline_residuals: baseline,
    })
}

/// CSV with columns `layer,rank,epoch,amplification,cosine,residual`. Skipped
/// ranks and undefined cosines are written as empty fields.
pub fn write_csv(path: &Path, reports: &[DynamicsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Report(e.to_string()))?;
    let map = |e: csv::Error| Error::Report(e.to_string());
    w.write_record(["layer", "rank", "epoch", "amplification", "cosine", "residual"])
        .map_err(map)?;
    for rep in reports {
        for s in &rep.series {
            for (t, &epoch) in rep.epochs.iter().enumerate() {
                let a = s.amplification.get(t).map(|v| format!("{v:e}")).unwrap_or_default();
                let c = s
                    .cosine
                    .get(t)
                    .copied()
                    .flatten()
                    .map(|v| format!("{v:e}"))
                    .unwrap_or_default();
                w.write_record([
                    rep.layer.to_string(),
                    s.rank.to_string(),
                    epoch.to_string(),
                    a,
                    c,
                    format!("{:e}", rep.residuals[t]),
                ])
                .map_err(map)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::TrainConfig;

    fn traj(ws: Vec<Mat>) -> TrainTrajectory {
        TrainTrajectory {
            snapshots: ws
                .into_iter()
                .enumerate()
                .map(|(e, w)| Snapshot {
                    epoch: e,
                    weights: vec![w],
                })
                .collect(),
            config: TrainConfig::default(),
        }
    }

    #[test]
    fn canonical_basis_gives_columns() {
        let w = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = traj(vec![w.clone(), w.clone()]);
        let u = neuron_projections(&t, 1, &Mat::identity(3, 3), &[2]).unwrap();
        assert_eq!(u[0][0].as_slice(), &[2.0, 5.0]);
        assert_eq!(u[0][1], u[0][0]);
    }

    #[test]
    fn missing_snapshot_is_an_error() {
        let t = traj(vec![Mat::identity(2, 2)]);
        assert!(matches!(
            covariance_reconstruction_check(&t, 1, &Mat::identity(2, 2), 5),
            Err(Error::Trajectory(_))
        ));
    }

    #[test]
    fn zero_column_is_skipped() {
        let w = Mat::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let t = traj(vec![w.clone(), w]);
        let u = neuron_projections(&t, 1, &Mat::identity(2, 2), &[2]).unwrap();
        assert_eq!(amplification_and_cosine(&u[0], 2).status, RankStatus::ZeroInitialNorm);
    }
}
