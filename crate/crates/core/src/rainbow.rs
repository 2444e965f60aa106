//! Weight-covariance estimation, Gaussianity diagnostics and sampling of
//! finite-width Gaussian rainbow networks.
//!
//! Covariances `Cⱼ` live in the KPCA basis of the reference network's
//! layer-`(j−1)` activations (the raw input basis for `j = 1`). A sampled
//! network draws `Wⱼ = Gⱼ Ĉⱼ^{1/2}` with `Ĉⱼ = Âⱼ₋₁ᵀ Cⱼ Âⱼ₋₁`, where `Âⱼ₋₁`
//! aligns its own previous-layer activations to the reference.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::align;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io;
use crate::kernel;
use crate::linalg::{self, Mat};
use crate::net::{self, Architecture, LayerSpec, Network, Prior};
use crate::rng;

/// Relative eigenvalue cutoff of the whitening pseudo-inverse.
pub const WHITEN_CUTOFF: f64 = 1e-10;
/// Relative eigenvalue threshold for retaining reference KPCA components.
pub const RETAIN_CUTOFF: f64 = 1e-12;
/// Default margin around the Marchenko-Pastur edges.
pub const MP_MARGIN: f64 = 0.02;
const MP_BINS: usize = 30;

/// `(1/dⱼ) WⱼᵀWⱼ`.
pub fn estimate_layer_covariance(w: &Mat) -> Mat {
    let d = w.nrows().max(1) as f64;
    linalg::symmetrize(&(w.tr_mul(w) / d))
}

/// `Â Ĉ Âᵀ`: re-expresses a covariance in the reference basis.
pub fn align_covariance_to_reference(c_hat: &Mat, a_prev: &Mat) -> Result<Mat> {
    if a_prev.ncols() != c_hat.nrows() || !c_hat.is_square() {
        return Err(Error::shape(format!(
            "alignment is {:?}, covariance is {:?}",
            a_prev.shape(),
            c_hat.shape()
        )));
    }
    Ok(linalg::symmetrize(&(a_prev * c_hat * a_prev.transpose())))
}

/// Arithmetic mean of covariances already expressed in one reference basis.
pub fn average_covariances(covs: &[Mat]) -> Result<Mat> {
    let first = covs
        .first()
        .ok_or_else(|| Error::param("no covariances to average"))?;
    let mut sum = Mat::zeros(first.nrows(), first.ncols());
    for c in covs {
        if c.shape() != first.shape() {
            return Err(Error::shape(format!(
                "covariances in different reference dims: {:?} vs {:?}",
                c.shape(),
                first.shape()
            )));
        }
        sum += c;
    }
    Ok(sum / covs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedWeights {
    pub matrix: Mat,
    pub effective_rank: usize,
}

/// `Gⱼ = Wⱼ Ĉⱼ^{−1/2}` with a relative pseudo-inverse cutoff.
pub fn whiten_weights(w: &Mat, c_hat: &Mat, cutoff: f64) -> Result<WhitenedWeights> {
    if c_hat.shape() != (w.ncols(), w.ncols()) {
        return Err(Error::shape("covariance does not match weight columns"));
    }
    let (pinv, rank) = linalg::psd_pinv_sqrt(c_hat, cutoff)?;
    if rank == 0 {
        return Err(Error::Degenerate("zero weight covariance".into()));
    }
    Ok(WhitenedWeights {
        matrix: w * pinv,
        effective_rank: rank,
    })
}

// ---------------------------------------------------------------------------
// Marchenko-Pastur

/// Marchenko-Pastur law with ratio `gamma ≤ 1` and unit variance.
#[derive(Debug, Clone, Copy)]
struct UnitMp {
    gamma: f64,
}

impl UnitMp {
    fn edges(&self) -> (f64, f64) {
        let s = self.gamma.sqrt();
        ((1.0 - s).powi(2), (1.0 + s).powi(2))
    }

    /// Integrand after `x = m − r cos t`, which removes the edge square roots.
    fn mass_until(&self, t_end: f64) -> f64 {
        let (lo, hi) = self.edges();
        let m = 0.5 * (lo + hi);
        let r = 0.5 * (hi - lo);
        let f = |t: f64| {
            // γ = 1 puts a removable 0/0 at t = 0.
            let t = t.max(1e-6);
            let x = m - r * t.cos();
            r * r * t.sin().powi(2) / (2.0 * std::f64::consts::PI * self.gamma * x)
        };
        let steps = 2000;
        let h = t_end / steps as f64;
        let mut s = f(0.0) + f(t_end);
        for i in 1..steps {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.edges();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let m = 0.5 * (lo + hi);
        let r = 0.5 * (hi - lo);
        let t = ((m - x) / r).clamp(-1.0, 1.0).acos();
        (self.mass_until(t) / self.mass_until(std::f64::consts::PI)).clamp(0.0, 1.0)
    }

    fn median(&self) -> f64 {
        let (mut lo, mut hi) = self.edges();
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Law of the nonzero eigenvalues of `(1/rows) GᵀG` for `γ = cols/rows` and
/// entry variance `sigma2`.
#[derive(Debug, Clone, Copy)]
pub struct MpLaw {
    pub gamma: f64,
    pub sigma2: f64,
}

impl MpLaw {
    fn unit(&self) -> (UnitMp, f64) {
        if self.gamma <= 1.0 {
            (UnitMp { gamma: self.gamma }, self.sigma2)
        } else {
            (
                UnitMp {
                    gamma: 1.0 / self.gamma,
                },
                self.sigma2 * self.gamma,
            )
        }
    }

    /// `σ²(1 ± √γ)²`.
    pub fn edges(&self) -> (f64, f64) {
        let s = self.gamma.sqrt();
        (self.sigma2 * (1.0 - s).powi(2), self.sigma2 * (1.0 + s).powi(2))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (u, scale) = self.unit();
        u.cdf(x / scale)
    }

    pub fn median(&self) -> f64 {
        let (u, scale) = self.unit();
        u.median() * scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub empirical_density: f64,
    pub mp_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpReport {
    pub gamma: f64,
    pub sigma2: f64,
    pub edges: (f64, f64),
    /// Share of nonzero eigenvalues outside the margin-widened support.
    pub outlier_fraction: f64,
    /// Eigenvalues above `λ₊ (1 + margin)`.
    pub n_above: usize,
    /// Nonzero eigenvalues, non-increasing. When `cols > rows` the
    /// `cols − rows` structural zeros are dropped.
    pub eigenvalues: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
}

/// Compares the spectrum of `(1/rows) GᵀG` against the Marchenko-Pastur law.
/// Without `sigma2`, the variance is set so that the median nonzero
/// eigenvalue matches the law's median.
pub fn mp_spectrum_test(g: &Mat, sigma2: Option<f64>, margin: f64) -> Result<MpReport> {
    let (rows, cols) = g.shape();
    if rows < 2 || cols < 2 {
        return Err(Error::Degenerate(format!("matrix {rows}x{cols} too small for MP test")));
    }
    let gamma = cols as f64 / rows as f64;
    let mut eig = linalg::sym_eigen(&(g.tr_mul(g) / rows as f64))?.values;
    eig.truncate(rows.min(cols));
    let sigma2 = match sigma2 {
        Some(s) => s,
        None => {
            let mut sorted = eig.clone();
            sorted.sort_by(f64::total_cmp);
            let k = sorted.len();
            let med = if k % 2 == 1 {
                sorted[k / 2]
            } else {
                0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
            };
            med / MpLaw { gamma, sigma2: 1.0 }.median()
        }
    };
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("zero variance spectrum".into()));
    }
    let law = MpLaw { gamma, sigma2 };
    let (lo, hi) = law.edges();
    let (lo_m, hi_m) = (lo * (1.0 - margin), hi * (1.0 + margin));
    let outliers = eig.iter().filter(|&&v| v < lo_m || v > hi_m).count();
    let n_above = eig.iter().filter(|&&v| v > hi_m).count();

    let top = eig.first().copied().unwrap_or(0.0).max(hi) * (1.0 + 1e-9);
    let width = top / MP_BINS as f64;
    let mut counts = vec![0usize; MP_BINS];
    for &v in &eig {
        let b = ((v.max(0.0) / width) as usize).min(MP_BINS - 1);
        counts[b] += 1;
    }
    let total = eig.len() as f64;
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let low = b as f64 * width;
            let high = low + width;
            HistogramBin {
                low,
                high,
                empirical_density: c as f64 / (total * width),
                mp_density: (law.cdf(high) - law.cdf(low)) / width,
            }
        })
        .collect();
    Ok(MpReport {
        gamma,
        sigma2,
        edges: (lo, hi),
        outlier_fraction: outliers as f64 / total,
        n_above,
        eigenvalues: eig,
        histogram,
    })
}

// ---------------------------------------------------------------------------
// Marginals

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and
/// N(0, 1).
pub fn ks_statistic(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let normal = Normal::standard();
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS test.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarginalStatus {
    Ok,
    /// Eigenvalue below the cutoff; no projections computed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub rank: usize,
    pub status: MarginalStatus,
    pub projections: Vec<f64>,
    pub ks: f64,
    pub critical: f64,
    pub gaussian: bool,
}

/// Standardized projections `⟨wᵢ, e_r⟩/√λ_r` of every neuron on the
/// requested 1-based ranks, with a KS test against N(0, 1).
pub fn gaussianity_marginals(
    w: &Mat,
    eigvecs: &Mat,
    eigvals: &[f64],
    ranks: &[usize],
) -> Result<Vec<Marginal>> {
    if eigvecs.nrows() != w.ncols() {
        return Err(Error::shape("eigenvectors do not match weight columns"));
    }
    let lmax = eigvals.first().copied().unwrap_or(0.0);
    ranks
        .iter()
        .map(|&r| {
            if r == 0 || r > eigvals.len() || r > eigvecs.ncols() {
                return Err(Error::param(format!("rank {r} outside the spectrum")));
            }
            let lambda = eigvals[r - 1];
            if !(lambda > WHITEN_CUTOFF * lmax) || lambda <= 0.0 {
                return Ok(Marginal {
                    rank: r,
                    status: MarginalStatus::Skipped,
                    projections: Vec::new(),
                    ks: f64::NAN,
                    critical: f64::NAN,
                    gaussian: false,
                });
            }
            let proj: Vec<f64> = (w * eigvecs.column(r - 1))
                .iter()
                .map(|v| v / lambda.sqrt())
                .collect();
            let ks = ks_statistic(&proj);
            let critical = ks_critical_1pct(proj.len());
            Ok(Marginal {
                rank: r,
                status: MarginalStatus::Ok,
                ks,
                critical,
                gaussian: ks < critical,
                projections: proj,
            })
        })
        .collect()
}

/// `W B_r B_rᵀ` and the explained variance ratio `‖W B_r‖²/‖W‖²`.
pub fn project_weights_rank(w: &Mat, basis: &Mat, r: usize) -> Result<(Mat, f64)> {
    if basis.nrows() != w.ncols() {
        return Err(Error::shape("basis does not match weight columns"));
    }
    if r > basis.ncols() {
        return Err(Error::param(format!("rank {r} exceeds {} basis vectors", basis.ncols())));
    }
    let b = basis.columns(0, r);
    let coords = w * b;
    let total = w.norm_squared();
    let ratio = if total > 0.0 { coords.norm_squared() / total } else { 0.0 };
    Ok((coords * b.transpose(), ratio))
}

// ---------------------------------------------------------------------------
// Model

/// SHA-256 of a network's weights and readout.
pub fn network_hash(net: &Network) -> String {
    let mut h = Sha256::new();
    for w in net.all_weights().iter().chain(std::iter::once(net.readout())) {
        h.update((w.nrows() as u64).to_le_bytes());
        h.update((w.ncols() as u64).to_le_bytes());
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                h.update(w[(r, c)].to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RainbowLayer {
    /// `Cⱼ`, `r_{j−1} × r_{j−1}` in the reference basis of the layer input.
    pub covariance: Mat,
    /// KPCA basis of the reference layer-`j` activations, `d_j^ref × r_j`.
    pub basis: Mat,
    /// Full reference activation spectrum of layer `j`.
    pub spectrum: Vec<f64>,
}

impl RainbowLayer {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub reference: String,
    pub sources: Vec<String>,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RainbowModel {
    /// Defines the reference activations `φⱼ` (the infinite-width proxy).
    pub reference: Network,
    pub layers: Vec<RainbowLayer>,
    /// Readout `θ`, `n_outputs × r_J`.
    pub readout: Mat,
    pub provenance: Provenance,
}

fn require_dense(arch: &Architecture) -> Result<()> {
    if arch.layers.iter().any(|l| l.prior != Prior::None) {
        return Err(Error::param("rainbow estimation supports dense layers only"));
    }
    Ok(())
}

/// Reference activations of every layer expressed in their retained KPCA
/// coordinates, together with the bases and spectra.
pub fn reference_coordinates(reference: &Network, inputs: &Mat) -> Result<Vec<(Mat, Mat, Vec<f64>)>> {
    reference
        .forward(inputs, None)?
        .into_iter()
        .map(|acts| {
            let full = kernel::kpca(&acts, None)?;
            let lmax = full.spectrum.first().copied().unwrap_or(0.0);
            let retained = full
                .spectrum
                .iter()
                .filter(|&&v| v > RETAIN_CUTOFF * lmax && v > 0.0)
                .count()
                .max(1);
            let basis = full.basis.columns(0, retained).into_owned();
            let coords = &acts * &basis;
            Ok((coords, basis, full.spectrum))
        })
        .collect()
}

/// Procrustes alignment of `hat` onto reference coordinates, restricted to
/// the reference rows (`r × d_hat`).
fn aligned_rotation(reference: &Mat, hat: &Mat) -> Result<(Mat, f64)> {
    let res = align::procrustes_align(reference, hat)?;
    let r = reference.ncols();
    let rot = res.rotation.rows(0, r).into_owned();
    let rel = if res.error_terms.trace_ref > 0.0 {
        res.error / res.error_terms.trace_ref
    } else {
        0.0
    };
    Ok((rot, rel))
}

/// Alignments `Â₁ … Â_J` of a network's train activations to reference
/// coordinates.
pub fn align_to_reference(reference_coords: &[Mat], net: &Network, inputs: &Mat) -> Result<Vec<Mat>> {
    let acts = net.forward(inputs, None)?;
    if acts.len() != reference_coords.len() {
        return Err(Error::shape("network depth differs from reference depth"));
    }
    reference_coords
        .iter()
        .zip(&acts)
        .map(|(r, a)| Ok(aligned_rotation(r, a)?.0))
        .collect()
}

/// Per-layer aligned covariances `C̃ⱼ = Âⱼ₋₁ Ĉⱼ Âⱼ₋₁ᵀ` and aligned readout
/// `Θ Â_Jᵀ` of one source network.
pub fn aligned_estimates(reference_coords: &[Mat], net: &Network, inputs: &Mat) -> Result<(Vec<Mat>, Mat)> {
    let rotations = align_to_reference(reference_coords, net, inputs)?;
    let mut covs = Vec::with_capacity(rotations.len());
    for j in 0..rotations.len() {
        let c_hat = estimate_layer_covariance(net.weights(j));
        let c = if j == 0 {
            c_hat
        } else {
            align_covariance_to_reference(&c_hat, &rotations[j - 1])?
        };
        covs.push(c);
    }
    let theta = net.readout() * rotations.last().expect("depth ≥ 1").transpose();
    Ok((covs, theta))
}

impl RainbowModel {
    /// Averages aligned covariance and readout estimates of `sources`, using
    /// `reference` to define the basis. Statistics use `train_inputs` only.
    pub fn build(reference: &Network, sources: &[&Network], train_inputs: &Mat) -> Result<Self> {
        require_dense(reference.arch())?;
        if sources.is_empty() {
            return Err(Error::param("at least one source network required"));
        }
        let refs = reference_coordinates(reference, train_inputs)?;
        let coords: Vec<Mat> = refs.iter().map(|(c, _, _)| c.clone()).collect();
        let depth = reference.depth();
        let mut cov_lists: Vec<Vec<Mat>> = vec![Vec::new(); depth];
        let mut thetas = Vec::with_capacity(sources.len());
        for src in sources {
            require_dense(src.arch())?;
            if src.depth() != depth || src.arch().n_outputs != reference.arch().n_outputs {
                return Err(Error::shape("source architecture incompatible with reference"));
            }
            let (covs, theta) = aligned_estimates(&coords, src, train_inputs)?;
            for (j, c) in covs.into_iter().enumerate() {
                cov_lists[j].push(c);
            }
            thetas.push(theta);
        }
        let layers = refs
            .into_iter()
            .enumerate()
            .map(|(j, (_, basis, spectrum))| {
                Ok(RainbowLayer {
                    covariance: average_covariances(&cov_lists[j])?,
                    basis,
                    spectrum,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reference: reference.clone(),
            layers,
            readout: average_covariances(&thetas)?,
            provenance: Provenance {
                reference: network_hash(reference),
                sources: sources.iter().map(|s| network_hash(s)).collect(),
                n_train: train_inputs.nrows(),
            },
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.reference.save(&dir.join("reference"))?;
        let mut layers = Vec::new();
        for (j, l) in self.layers.iter().enumerate() {
            io::write_matrix(&dir.join(format!("cov{}.bin", j + 1)), &l.covariance)?;
            io::write_matrix(&dir.join(format!("basis{}.bin", j + 1)), &l.basis)?;
            io::write_vector(&dir.join(format!("spectrum{}.bin", j + 1)), &l.spectrum)?;
            layers.push(LayerManifest {
                cov_dim: l.covariance.nrows(),
                basis_rows: l.basis.nrows(),
                basis_cols: l.basis.ncols(),
                spectrum_len: l.spectrum.len(),
            });
        }
        io::write_matrix(&dir.join("theta.bin"), &self.readout)?;
        let manifest = ModelManifest {
            family: "gaussian".into(),
            layers,
            theta_rows: self.readout.nrows(),
            theta_cols: self.readout.ncols(),
            provenance: self.provenance.clone(),
        };
        io::write_toml(&dir.join("manifest.toml"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: ModelManifest = io::read_toml(&dir.join("manifest.toml"))?;
        let reference = Network::load(&dir.join("reference"))?;
        let layers = m
            .layers
            .iter()
            .enumerate()
            .map(|(j, l)| {
                Ok(RainbowLayer {
                    covariance: io::read_matrix(&dir.join(format!("cov{}.bin", j + 1)), l.cov_dim, l.cov_dim)?,
                    basis: io::read_matrix(
                        &dir.join(format!("basis{}.bin", j + 1)),
                        l.basis_rows,
                        l.basis_cols,
                    )?,
                    spectrum: io::read_vector(&dir.join(format!("spectrum{}.bin", j + 1)), l.spectrum_len)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let readout = io::read_matrix(&dir.join("theta.bin"), m.theta_rows, m.theta_cols)?;
        Ok(Self {
            reference,
            layers,
            readout,
            provenance: m.provenance,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerManifest {
    cov_dim: usize,
    basis_rows: usize,
    basis_cols: usize,
    spectrum_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    family: String,
    layers: Vec<LayerManifest>,
    theta_rows: usize,
    theta_cols: usize,
    provenance: Provenance,
}

// ---------------------------------------------------------------------------
// Sampling

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Realign,
    Retrain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Relative train-split Procrustes error `error / tr 𝔼[φφᵀ]` per layer.
    pub alignment_errors: Vec<f64>,
}

/// Draws a finite-width Gaussian rainbow network layer by layer.
pub fn sample_rainbow_network(
    model: &RainbowModel,
    widths: &[usize],
    dataset: &Dataset,
    seed: u64,
    classifier: Classifier,
) -> Result<(Network, SampleMetrics)> {
    let depth = model.depth();
    if widths.len() != depth {
        return Err(Error::param(format!(
            "{} widths given for a depth-{depth} model",
            widths.len()
        )));
    }
    let ref_arch = model.reference.arch();
    for (j, (&w, spec)) in widths.iter().zip(&ref_arch.layers).enumerate() {
        if w == 0 {
            return Err(Error::param("widths must be ≥ 1"));
        }
        if w > spec.out_dim {
            return Err(Error::Width {
                layer: j + 1,
                requested: w,
                available: spec.out_dim,
            });
        }
    }
    let train = dataset.train();
    let test = dataset.test();
    let refs = reference_coordinates(&model.reference, &train.inputs)?;
    let arch = Architecture::mlp(ref_arch.input_dim(), widths, ref_arch.n_outputs, ref_arch.standardize);

    let mut weights = Vec::with_capacity(depth);
    let mut stats = Vec::with_capacity(depth);
    let mut alignment_errors = Vec::with_capacity(depth);
    let mut acts = train.inputs.clone();
    let mut a_prev: Option<Mat> = None;
    for j in 0..depth {
        let c = &model.layers[j].covariance;
        let c_hat = match &a_prev {
            None => c.clone(),
            Some(a) => linalg::symmetrize(&(a.transpose() * c * a)),
        };
        let root = linalg::psd_sqrt(&c_hat)?;
        let mut g_rng = rng::stream(seed, "rainbow", "sample", j as u64);
        let g = linalg::gaussian_matrix(widths[j], c_hat.nrows(), &mut g_rng);
        let w = g * root;
        let spec: LayerSpec = arch.layers[j];
        let s = if arch.standardize {
            Some(net::layer_stats(&spec, &w, &acts))
        } else {
            None
        };
        acts = net::apply_layer(&spec, &w, &acts, s.as_ref());
        if acts.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite activations at layer {}", j + 1)));
        }
        let (rot, rel) = aligned_rotation(&refs[j].0, &acts)?;
        alignment_errors.push(rel);
        a_prev = Some(rot);
        weights.push(w);
        if let Some(s) = s {
            stats.push(s);
        }
    }
    let a_last = a_prev.expect("depth ≥ 1");
    let realigned = &model.readout * &a_last;
    let readout = match classifier {
        Classifier::Realign => realigned,
        Classifier::Retrain => fit_readout_logistic(&acts, &train.labels, realigned, 1e-4, 500)?,
    };
    let norm = if arch.standardize { Some(stats) } else { None };
    let sampled = Network::from_parts(arch, weights, readout, norm)?;
    let metrics = SampleMetrics {
        train_accuracy: sampled.accuracy(&train)?,
        test_accuracy: if test.is_empty() { 0.0 } else { sampled.accuracy(&test)? },
        alignment_errors,
    };
    Ok((sampled, metrics))
}

/// Multinomial logistic regression on frozen features by full-batch
/// gradient descent, starting from `init` (`n_outputs × d`).
pub fn fit_readout_logistic(
    features: &Mat,
    labels: &[usize],
    init: Mat,
    l2: f64,
    iterations: usize,
) -> Result<Mat> {
    if features.nrows() != labels.len() || init.ncols() != features.ncols() {
        return Err(Error::shape("readout fit: inconsistent shapes"));
    }
    let n = features.nrows().max(1) as f64;
    let lmax = linalg::sym_eigen(&linalg::second_moment(features))?
        .values
        .first()
        .copied()
        .unwrap_or(0.0);
    let step = 1.0 / (0.5 * lmax + l2).max(1e-12);
    let mut theta = init;
    for _ in 0..iterations {
        let logits = features * theta.transpose();
        let mut resid = net::softmax_rows(&logits);
        for (i, &y) in labels.iter().enumerate() {
            resid[(i, y)] -= 1.0;
        }
        let grad = resid.tr_mul(features) / n + &theta * l2;
        theta -= grad * step;
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("readout fit diverged"));
    }
    Ok(theta)
}
