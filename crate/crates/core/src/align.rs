//! Orthogonal Procrustes alignment of activation sets.
//!
//! Given activations `φ` (reference, `n × d_ref`) and `φ̂` (`n × d_hat`) of the
//! same samples, finds `Â = UVᵀ` minimizing `𝔼‖Âφ̂ − φ‖²`, where
//! `(1/n) φᵀφ̂ = U S Vᵀ`. The minimal error splits into
//! `tr 𝔼[φ̂φ̂ᵀ] + tr 𝔼[φφᵀ] − 2‖𝔼[φφ̂ᵀ]‖_*`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{self, Mat};

/// Relative tolerance of the in-library decomposition check.
const DECOMPOSITION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTerms {
    pub trace_hat: f64,
    pub trace_ref: f64,
    pub nuclear: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// `max(d_ref, d_hat) × d_hat` with orthonormal columns. When
    /// `d_hat > d_ref` the reference is padded with zero coordinates.
    pub rotation: Mat,
    /// Non-increasing singular values of the cross-covariance.
    pub singular_values: Vec<f64>,
    /// Mean-square alignment error from the trace decomposition.
    pub error: f64,
    /// The same error evaluated directly as `𝔼‖Âφ̂ − φ‖²`.
    pub direct_error: f64,
    pub error_terms: ErrorTerms,
    pub ref_dim: usize,
    pub n_samples: usize,
}

impl AlignmentResult {
    pub fn hat_dim(&self) -> usize {
        self.rotation.ncols()
    }

    /// Maps hat activations (`n × d_hat`) into reference coordinates
    /// (`n × max(d_ref, d_hat)`).
    pub fn apply(&self, hat: &Mat) -> Result<Mat> {
        if hat.ncols() != self.hat_dim() {
            return Err(Error::shape(format!(
                "activations have {} columns, rotation expects {}",
                hat.ncols(),
                self.hat_dim()
            )));
        }
        Ok(hat * self.rotation.transpose())
    }

    /// Writes the rotation and a manifest describing its provenance.
    pub fn save(&self, dir: &Path, info: &AlignmentInfo) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_matrix(&dir.join("rotation.bin"), &self.rotation)?;
        let manifest = AlignmentManifest {
            info: info.clone(),
            rows: self.rotation.nrows(),
            cols: self.rotation.ncols(),
            ref_dim: self.ref_dim,
            n_samples: self.n_samples,
            error: self.error,
            singular_values: self.singular_values.clone(),
            error_terms: self.error_terms,
        };
        io::write_toml(&dir.join("manifest.toml"), &manifest)
    }
}

/// Provenance of a stored alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInfo {
    pub reference: String,
    pub hat: String,
    pub layer: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AlignmentManifest {
    info: AlignmentInfo,
    rows: usize,
    cols: usize,
    ref_dim: usize,
    n_samples: usize,
    error: f64,
    singular_values: Vec<f64>,
    error_terms: ErrorTerms,
}

/// Loads a rotation written by [`AlignmentResult::save`].
pub fn load_rotation(dir: &Path) -> Result<(Mat, AlignmentInfo)> {
    let m: AlignmentManifest = io::read_toml(&dir.join("manifest.toml"))?;
    let rotation = io::read_matrix(&dir.join("rotation.bin"), m.rows, m.cols)?;
    Ok((rotation, m.info))
}

fn check_pair(reference: &Mat, hat: &Mat) -> Result<()> {
    if reference.nrows() != hat.nrows() {
        return Err(Error::shape(format!(
            "reference has {} samples, hat has {}",
            reference.nrows(),
            hat.nrows()
        )));
    }
    Ok(())
}

/// Uncentered cross-covariance `(1/n) refᵀ hat`.
pub fn cross_covariance(reference: &Mat, hat: &Mat) -> Result<Mat> {
    check_pair(reference, hat)?;
    let n = reference.nrows().max(1) as f64;
    Ok(reference.tr_mul(hat) / n)
}

fn pad_columns(m: &Mat, cols: usize) -> Mat {
    if m.ncols() >= cols {
        return m.clone();
    }
    let mut out = Mat::zeros(m.nrows(), cols);
    out.columns_mut(0, m.ncols()).copy_from(m);
    out
}

fn mean_sq_norm(m: &Mat) -> f64 {
    m.norm_squared() / m.nrows().max(1) as f64
}

pub fn procrustes_align(reference: &Mat, hat: &Mat) -> Result<AlignmentResult> {
    check_pair(reference, hat)?;
    let n = reference.nrows();
    if n == 0 {
        return Err(Error::param("alignment needs at least one sample"));
    }
    if reference.iter().chain(hat.iter()).any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite activations"));
    }
    let ref_dim = reference.ncols();
    let padded = pad_columns(reference, hat.ncols());
    let m = cross_covariance(&padded, hat)?;
    let dec = linalg::svd(&m)?;
    let rotation = &dec.u * dec.v.transpose();
    let nuclear: f64 = dec.singular.iter().sum();
    let terms = ErrorTerms {
        trace_hat: mean_sq_norm(hat),
        trace_ref: mean_sq_norm(reference),
        nuclear,
    };
    let decomposed = terms.trace_hat + terms.trace_ref - 2.0 * nuclear;
    let direct = mean_sq_norm(&(hat * rotation.transpose() - &padded));
    let scale = terms.trace_hat + terms.trace_ref;
    if (direct - decomposed).abs() > DECOMPOSITION_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::numeric(format!(
            "alignment error decomposition mismatch: direct {direct}, decomposed {decomposed}"
        )));
    }
    Ok(AlignmentResult {
        rotation,
        singular_values: dec.singular,
        error: decomposed.max(0.0),
        direct_error: direct,
        error_terms: terms,
        ref_dim,
        n_samples: n,
    })
}

/// Relative error `𝔼‖Âφ̂ − φ‖² / 𝔼‖φ‖²` of a frozen rotation on held-out
/// activations.
pub fn alignment_error_on_split(
    result: &AlignmentResult,
    ref_test: &Mat,
    hat_test: &Mat,
) -> Result<f64> {
    check_pair(ref_test, hat_test)?;
    if ref_test.ncols() != result.ref_dim {
        return Err(Error::shape(format!(
            "reference test activations have {} columns, alignment expects {}",
            ref_test.ncols(),
            result.ref_dim
        )));
    }
    let mapped = result.apply(hat_test)?;
    let padded = pad_columns(ref_test, mapped.ncols());
    let energy = ref_test.norm_squared();
    if energy <= 0.0 {
        return Err(Error::Degenerate("reference test activations are all zero".into()));
    }
    Ok((mapped - padded).norm_squared() / energy)
}

/// Rotation-invariant similarity `‖𝔼[φφ̂ᵀ]‖_* / √(𝔼‖φ‖² 𝔼‖φ̂‖²)`.
pub fn similarity_score(reference: &Mat, hat: &Mat) -> Result<f64> {
    check_pair(reference, hat)?;
    let tr_ref = mean_sq_norm(reference);
    let tr_hat = mean_sq_norm(hat);
    if !(tr_ref > 0.0 && tr_hat > 0.0) {
        return Err(Error::UndefinedSimilarity(
            "an activation set has zero total variance".into(),
        ));
    }
    let m = cross_covariance(reference, hat)?;
    let nuclear: f64 = linalg::svd(&m)?.singular.iter().sum();
    Ok((nuclear / (tr_ref * tr_hat).sqrt()).clamp(0.0, 1.0))
}
