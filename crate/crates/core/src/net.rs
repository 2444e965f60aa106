//! Bias-free feed-forward networks.
//!
//! Weights are stored in the normalized convention: each nonlinearity is
//! `ρ(z) = max(0, z) / √dⱼ` (after optional standardization), so weight
//! entries are O(1) regardless of width. The trainer nevertheless follows
//! standard-parameterization SGD dynamics: it differentiates with respect to
//! `Vⱼ = Wⱼ / √fan_in` and maps the update back, which leaves the stored
//! function unchanged at every step.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{DataPart, Dataset, Split};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::Mat;
use crate::rng;

/// Variance floor of the standardization layers.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Identity,
}

/// Fixed operator applied to a layer input before its learned weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Prior {
    None,
    /// 1-D patch extraction. The input is laid out position-major with
    /// `channels` values per position.
    Patch {
        channels: usize,
        window: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    /// Number of neurons (output channels for a patch layer).
    pub out_dim: usize,
    pub prior: Prior,
    pub nonlinearity: Nonlinearity,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            prior: Prior::None,
            nonlinearity: Nonlinearity::Relu,
        }
    }

    pub fn with_nonlinearity(mut self, nonlinearity: Nonlinearity) -> Self {
        self.nonlinearity = nonlinearity;
        self
    }

    /// Columns of the weight matrix.
    pub fn fan_in(&self) -> usize {
        match self.prior {
            Prior::None => self.in_dim,
            Prior::Patch {
                channels, window, ..
            } => channels * window,
        }
    }

    /// Spatial positions produced by the prior (1 for dense layers).
    pub fn positions(&self) -> usize {
        match self.prior {
            Prior::None => 1,
            Prior::Patch {
                channels,
                window,
                stride,
            } => {
                let length = self.in_dim / channels.max(1);
                if window > length || stride == 0 {
                    0
                } else {
                    (length - window) / stride + 1
                }
            }
        }
    }

    pub fn activation_dim(&self) -> usize {
        self.out_dim * self.positions()
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim < 1 || self.out_dim < 1 {
            return Err(Error::param("layer dimensions must be ≥ 1"));
        }
        if let Prior::Patch {
            channels,
            window,
            stride,
        } = self.prior
        {
            if channels == 0 || stride == 0 || window == 0 {
                return Err(Error::param("patch channels, window and stride must be ≥ 1"));
            }
            if self.in_dim % channels != 0 {
                return Err(Error::param(format!(
                    "input dim {} is not a multiple of {} channels",
                    self.in_dim, channels
                )));
            }
            let length = self.in_dim / channels;
            if window > length {
                return Err(Error::param(format!(
                    "patch window {window} exceeds spatial extent {length}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
    pub n_outputs: usize,
    pub standardize: bool,
}

impl Architecture {
    /// `depth` dense ReLU layers of equal width.
    pub fn mlp(d0: usize, widths: &[usize], n_outputs: usize, standardize: bool) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = d0;
        for &w in widths {
            layers.push(LayerSpec::dense(fan_in, w));
            fan_in = w;
        }
        Self {
            layers,
            n_outputs,
            standardize,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.activation_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::param("network needs at least one layer"));
        }
        if self.n_outputs < 1 {
            return Err(Error::param("network needs at least one output"));
        }
        for (j, spec) in self.layers.iter().enumerate() {
            spec.validate()?;
            if j > 0 {
                let prev = self.layers[j - 1].activation_dim();
                if prev != spec.in_dim {
                    return Err(Error::shape(format!(
                        "layer {} expects input dim {}, previous layer produces {}",
                        j + 1,
                        spec.in_dim,
                        prev
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Frozen per-unit standardization statistics of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Gaussian,
    UniformKaiming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    weights: Vec<Mat>,
    readout: Mat,
    norm: Option<Vec<NormStats>>,
}

/// Activations of one layer over a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    /// `n_samples × dⱼ`.
    pub values: Mat,
    /// 1-based layer index; 0 denotes the input.
    pub layer: usize,
    pub split: Option<Split>,
    /// Whether standardization was applied.
    pub normalized: bool,
}

impl ActivationSet {
    pub fn new(values: Mat, layer: usize, split: Option<Split>, normalized: bool) -> Self {
        Self {
            values,
            layer,
            split,
            normalized,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Draws every weight i.i.d. with unit variance: `N(0, 1)` or `U(−√3, √3)`.
pub fn init_network(arch: &Architecture, init: Init, seed: u64) -> Result<Network> {
    arch.validate()?;
    let draw = |rows: usize, cols: usize, index: u64| -> Mat {
        let mut r = rng::stream(seed, "net", "init", index);
        match init {
            Init::Gaussian => Mat::from_fn(rows, cols, |_, _| r.sample(StandardNormal)),
            Init::UniformKaiming => {
                let bound = 3.0_f64.sqrt();
                let u = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                Mat::from_fn(rows, cols, |_, _| r.sample(u))
            }
        }
    };
    let weights: Vec<Mat> = arch
        .layers
        .iter()
        .enumerate()
        .map(|(j, s)| draw(s.out_dim, s.fan_in(), j as u64))
        .collect();
    let readout = draw(arch.n_outputs, arch.output_dim(), arch.layers.len() as u64);
    Ok(Network {
        arch: arch.clone(),
        weights,
        readout,
        norm: None,
    })
}

// ---------------------------------------------------------------------------
// Layer mechanics

/// Extracts patches: row `i·P + p` holds the window starting at position
/// `p·stride` of sample `i`, entries ordered `k·channels + c`.
fn im2col(input: &Mat, channels: usize, window: usize, stride: usize, positions: usize) -> Mat {
    let n = input.nrows();
    let width = channels * window;
    let mut out = Mat::zeros(n * positions, width);
    for i in 0..n {
        for p in 0..positions {
            let start = p * stride * channels;
            for q in 0..width {
                out[(i * positions + p, q)] = input[(i, start + q)];
            }
        }
    }
    out
}

fn col2im(
    grad: &Mat,
    n: usize,
    in_dim: usize,
    channels: usize,
    stride: usize,
    positions: usize,
) -> Mat {
    let mut out = Mat::zeros(n, in_dim);
    let width = grad.ncols();
    for i in 0..n {
        for p in 0..positions {
            let start = p * stride * channels;
            for q in 0..width {
                out[(i, start + q)] += grad[(i * positions + p, q)];
            }
        }
    }
    out
}

/// `(n·P) × C` with rows `(i, p)` → `n × (P·C)` position-major.
fn fold_positions(m: &Mat, n: usize, positions: usize) -> Mat {
    if positions == 1 {
        return m.clone();
    }
    let c = m.ncols();
    Mat::from_fn(n, positions * c, |i, q| m[(i * positions + q / c, q % c)])
}

fn unfold_positions(m: &Mat, positions: usize, channels: usize) -> Mat {
    if positions == 1 {
        return m.clone();
    }
    let n = m.nrows();
    Mat::from_fn(n * positions, channels, |r, c| {
        m[(r / positions, (r % positions) * channels + c)]
    })
}

fn layer_input(spec: &LayerSpec, input: &Mat) -> Mat {
    match spec.prior {
        Prior::None => input.clone(),
        Prior::Patch {
            channels,
            window,
            stride,
        } => im2col(input, channels, window, stride, spec.positions()),
    }
}

fn activate(spec: &LayerSpec, z: &Mat) -> Mat {
    match spec.nonlinearity {
        Nonlinearity::Relu => z.map(|v| v.max(0.0)),
        Nonlinearity::Identity => z.clone(),
    }
}

fn column_stats(h: &Mat) -> NormStats {
    let rows = h.nrows().max(1) as f64;
    let mut mean = Vec::with_capacity(h.ncols());
    let mut var = Vec::with_capacity(h.ncols());
    for col in h.column_iter() {
        let m = col.sum() / rows;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / rows;
        mean.push(m);
        var.push(v);
    }
    NormStats { mean, var }
}

fn standardize(h: &Mat, stats: &NormStats) -> Mat {
    let mut out = h.clone();
    for (c, mut col) in out.column_iter_mut().enumerate() {
        let inv = 1.0 / (stats.var[c] + NORM_EPS).sqrt();
        let m = stats.mean[c];
        col.apply(|x| *x = (*x - m) * inv);
    }
    out
}

/// Divisor applied by ρ at a layer.
pub fn layer_scale(spec: &LayerSpec) -> f64 {
    1.0 / (spec.out_dim as f64).sqrt()
}

/// Standardization statistics of a layer computed on `input`.
pub fn layer_stats(spec: &LayerSpec, weights: &Mat, input: &Mat) -> NormStats {
    let patches = layer_input(spec, input);
    let z = &patches * weights.transpose();
    column_stats(&activate(spec, &z))
}

/// Applies one layer: prior, weights, nonlinearity, optional
/// standardization, and the `1/√dⱼ` factor.
pub fn apply_layer(spec: &LayerSpec, weights: &Mat, input: &Mat, stats: Option<&NormStats>) -> Mat {
    let n = input.nrows();
    let patches = layer_input(spec, input);
    let z = &patches * weights.transpose();
    let mut h = activate(spec, &z);
    if let Some(s) = stats {
        h = standardize(&h, s);
    }
    h *= layer_scale(spec);
    fold_positions(&h, n, spec.positions())
}

/// Spatial layout of an activation vector, position-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialLayout {
    pub channels: usize,
    pub length: usize,
}

/// Pure reindexing of activations into overlapping patches. The output at
/// position `p` concatenates `window` consecutive positions starting at
/// `p·stride`, so it has `channels·window` channels.
pub fn apply_patch_prior(
    activations: &ActivationSet,
    layout: SpatialLayout,
    window: usize,
    stride: usize,
) -> Result<(ActivationSet, SpatialLayout)> {
    if layout.channels * layout.length != activations.dim() {
        return Err(Error::shape(format!(
            "layout {}x{} does not match activation dim {}",
            layout.length,
            layout.channels,
            activations.dim()
        )));
    }
    if window == 0 || stride == 0 || window > layout.length {
        return Err(Error::param(format!(
            "window {window} / stride {stride} invalid for spatial extent {}",
            layout.length
        )));
    }
    let positions = (layout.length - window) / stride + 1;
    let cols = im2col(&activations.values, layout.channels, window, stride, positions);
    let values = fold_positions(&cols, activations.n_samples(), positions);
    Ok((
        ActivationSet {
            values,
            ..activations.clone()
        },
        SpatialLayout {
            channels: layout.channels * window,
            length: positions,
        },
    ))
}

// ---------------------------------------------------------------------------
// Network

impl Network {
    pub fn from_parts(
        arch: Architecture,
        weights: Vec<Mat>,
        readout: Mat,
        norm: Option<Vec<NormStats>>,
    ) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.depth() {
            return Err(Error::shape(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                arch.depth()
            )));
        }
        for (j, (w, s)) in weights.iter().zip(&arch.layers).enumerate() {
            if w.shape() != (s.out_dim, s.fan_in()) {
                return Err(Error::shape(format!(
                    "layer {} weights are {:?}, expected {:?}",
                    j + 1,
                    w.shape(),
                    (s.out_dim, s.fan_in())
                )));
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("layer {} has non-finite weights", j + 1)));
            }
        }
        if readout.shape() != (arch.n_outputs, arch.output_dim()) {
            return Err(Error::shape(format!(
                "readout is {:?}, expected {:?}",
                readout.shape(),
                (arch.n_outputs, arch.output_dim())
            )));
        }
        if let Some(n) = &norm {
            if n.len() != arch.depth() {
                return Err(Error::shape("one NormStats per layer required"));
            }
            if n.iter().flat_map(|s| &s.var).any(|v| !(*v >= 0.0)) {
                return Err(Error::numeric("negative standardization variance"));
            }
        }
        Ok(Self {
            arch,
            weights,
            readout,
            norm,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    /// Weights of layer `j` (0-based).
    pub fn weights(&self, j: usize) -> &Mat {
        &self.weights[j]
    }

    pub fn all_weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn readout(&self) -> &Mat {
        &self.readout
    }

    pub fn norm_stats(&self) -> Option<&[NormStats]> {
        self.norm.as_deref()
    }

    pub fn set_readout(&mut self, readout: Mat) -> Result<()> {
        if readout.shape() != self.readout.shape() {
            return Err(Error::shape("readout shape mismatch"));
        }
        self.readout = readout;
        Ok(())
    }

    pub fn with_layer_weights(&self, j: usize, w: Mat) -> Result<Network> {
        let mut weights = self.weights.clone();
        weights[j] = w;
        Network::from_parts(self.arch.clone(), weights, self.readout.clone(), self.norm.clone())
    }

    fn check_input(&self, inputs: &Mat) -> Result<()> {
        if inputs.ncols() != self.arch.input_dim() {
            return Err(Error::shape(format!(
                "input dim {} does not match network input dim {}",
                inputs.ncols(),
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    fn frozen_stats(&self) -> Result<Option<&[NormStats]>> {
        if !self.arch.standardize {
            return Ok(None);
        }
        self.norm
            .as_deref()
            .map(Some)
            .ok_or_else(|| Error::param("standardization enabled but statistics not fitted"))
    }

    /// Recomputes standardization statistics layer by layer on `inputs`.
    pub fn fit_norm_stats(&mut self, inputs: &Mat) -> Result<()> {
        self.check_input(inputs)?;
        if !self.arch.standardize {
            return Ok(());
        }
        let mut stats = Vec::with_capacity(self.depth());
        let mut a = inputs.clone();
        for (spec, w) in self.arch.layers.iter().zip(&self.weights) {
            let s = layer_stats(spec, w, &a);
            a = apply_layer(spec, w, &a, Some(&s));
            stats.push(s);
        }
        self.norm = Some(stats);
        Ok(())
    }

    /// Activations after each of the first `upto` layers (all when `None`).
    pub fn forward(&self, inputs: &Mat, upto: Option<usize>) -> Result<Vec<Mat>> {
        self.check_input(inputs)?;
        let stats = self.frozen_stats()?;
        let upto = upto.unwrap_or(self.depth()).min(self.depth());
        let mut out = Vec::with_capacity(upto);
        let mut a = inputs.clone();
        for j in 0..upto {
            a = apply_layer(
                &self.arch.layers[j],
                &self.weights[j],
                &a,
                stats.map(|s| &s[j]),
            );
            out.push(a.clone());
        }
        Ok(out)
    }

    /// Activation sets of every layer on one split of a dataset.
    pub fn activations(&self, part: &DataPart, split: Split) -> Result<Vec<ActivationSet>> {
        Ok(self
            .forward(&part.inputs, None)?
            .into_iter()
            .enumerate()
            .map(|(j, v)| ActivationSet::new(v, j + 1, Some(split), self.arch.standardize))
            .collect())
    }

    pub fn logits(&self, inputs: &Mat) -> Result<Mat> {
        let acts = self.forward(inputs, None)?;
        let last = acts.last().expect("at least one layer");
        Ok(last * self.readout.transpose())
    }

    pub fn predict(&self, inputs: &Mat) -> Result<Vec<usize>> {
        let logits = self.logits(inputs)?;
        Ok(argmax_rows(&logits))
    }

    pub fn accuracy(&self, part: &DataPart) -> Result<f64> {
        if part.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(&part.inputs)?;
        Ok(accuracy(&pred, &part.labels))
    }

    /// Standard-parameterization weights `Vⱼ = Wⱼ/√fan_in` and readout.
    pub fn to_standard(&self) -> (Vec<Mat>, Mat) {
        let w = self
            .weights
            .iter()
            .map(|w| w * (1.0 / (w.ncols() as f64).sqrt()))
            .collect();
        let r = &self.readout * (1.0 / (self.readout.ncols() as f64).sqrt());
        (w, r)
    }

    /// Inverse of [`Network::to_standard`]: folds the `√fan_in` factors back
    /// into the stored (normalized-convention) weights.
    pub fn normalize_convention(
        arch: Architecture,
        standard_weights: &[Mat],
        standard_readout: &Mat,
        norm: Option<Vec<NormStats>>,
    ) -> Result<Network> {
        let w = standard_weights
            .iter()
            .map(|v| v * (v.ncols() as f64).sqrt())
            .collect();
        let r = standard_readout * (standard_readout.ncols() as f64).sqrt();
        Network::from_parts(arch, w, r, norm)
    }

    /// Writes per-layer flat binary matrices and a `manifest.toml`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (j, w) in self.weights.iter().enumerate() {
            io::write_matrix(&dir.join(format!("layer{}.bin", j + 1)), w)?;
        }
        io::write_matrix(&dir.join("readout.bin"), &self.readout)?;
        let manifest = NetworkManifest {
            architecture: self.arch.clone(),
            norm_stats: self.norm.clone(),
            dtype: "f64-le-row-major".into(),
        };
        io::write_toml(&dir.join("manifest.toml"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Network> {
        let manifest: NetworkManifest = io::read_toml(&dir.join("manifest.toml"))?;
        let arch = manifest.architecture;
        arch.validate()?;
        let weights = arch
            .layers
            .iter()
            .enumerate()
            .map(|(j, s)| {
                io::read_matrix(&dir.join(format!("layer{}.bin", j + 1)), s.out_dim, s.fan_in())
            })
            .collect::<Result<Vec<_>>>()?;
        let readout = io::read_matrix(&dir.join("readout.bin"), arch.n_outputs, arch.output_dim())?;
        Network::from_parts(arch, weights, readout, manifest.norm_stats)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkManifest {
    dtype: String,
    architecture: Architecture,
    norm_stats: Option<Vec<NormStats>>,
}

pub fn argmax_rows(m: &Mat) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

/// Row-wise softmax probabilities.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &Mat, labels: &[usize]) -> f64 {
    let n = labels.len().max(1) as f64;
    logits
        .row_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.max();
            let lse = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
            lse - row[y]
        })
        .sum::<f64>()
        / n
}

// ---------------------------------------------------------------------------
// Gradients

/// How standardization statistics are obtained in a loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsMode {
    /// Batch statistics, differentiated through (training mode).
    Batch,
    /// The network's frozen statistics.
    Frozen,
}

/// Loss gradients with respect to the stored (normalized-convention) weights.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub weights: Vec<Mat>,
    pub readout: Mat,
}

struct LayerCache {
    patches: Mat,
    z: Mat,
    normalized: Option<Mat>,
    inv_std: Vec<f64>,
}

/// Cross-entropy loss and its exact gradient by backpropagation.
pub fn loss_and_gradients(
    net: &Network,
    inputs: &Mat,
    labels: &[usize],
    mode: StatsMode,
) -> Result<Gradients> {
    net.check_input(inputs)?;
    if labels.len() != inputs.nrows() {
        return Err(Error::shape("labels and inputs disagree on sample count"));
    }
    let n = inputs.nrows();
    let frozen = match mode {
        StatsMode::Frozen => net.frozen_stats()?,
        StatsMode::Batch => None,
    };
    let mut caches = Vec::with_capacity(net.depth());
    let mut a = inputs.clone();
    for (j, (spec, w)) in net.arch.layers.iter().zip(&net.weights).enumerate() {
        let patches = layer_input(spec, &a);
        let z = &patches * w.transpose();
        let h = activate(spec, &z);
        let (y, normalized, inv_std) = if net.arch.standardize {
            let stats = match (mode, frozen) {
                (StatsMode::Frozen, Some(s)) => s[j].clone(),
                _ => column_stats(&h),
            };
            let y = standardize(&h, &stats);
            let inv: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
            (y.clone(), Some(y), inv)
        } else {
            (h, None, Vec::new())
        };
        let out = fold_positions(&(y * layer_scale(spec)), n, spec.positions());
        caches.push(LayerCache {
            patches,
            z,
            normalized,
            inv_std,
        });
        a = out;
    }
    let logits = &a * net.readout.transpose();
    let loss = cross_entropy(&logits, labels);
    if !loss.is_finite() {
        return Err(Error::numeric("non-finite loss"));
    }

    let mut dlogits = softmax_rows(&logits);
    for (i, &y) in labels.iter().enumerate() {
        dlogits[(i, y)] -= 1.0;
    }
    dlogits /= n.max(1) as f64;
    let readout_grad = dlogits.tr_mul(&a);
    let mut da = &dlogits * &net.readout;

    let mut weight_grads = vec![Mat::zeros(0, 0); net.depth()];
    for j in (0..net.depth()).rev() {
        let spec = &net.arch.layers[j];
        let cache = &caches[j];
        let positions = spec.positions();
        let mut dy = unfold_positions(&da, positions, spec.out_dim);
        dy *= layer_scale(spec);
        let dh = match &cache.normalized {
            None => dy,
            Some(yhat) => {
                let rows = yhat.nrows() as f64;
                let mut dh = dy.clone();
                for c in 0..dh.ncols() {
                    let inv = cache.inv_std[c];
                    match mode {
                        StatsMode::Frozen => dh.column_mut(c).scale_mut(inv),
                        StatsMode::Batch => {
                            let mean_dy = dy.column(c).sum() / rows;
                            let mean_dyy = dy.column(c).dot(&yhat.column(c)) / rows;
                            for r in 0..dh.nrows() {
                                dh[(r, c)] =
                                    inv * (dy[(r, c)] - mean_dy - yhat[(r, c)] * mean_dyy);
                            }
                        }
                    }
                }
                dh
            }
        };
        let dz = match spec.nonlinearity {
            Nonlinearity::Relu => dh.zip_map(&cache.z, |g, z| if z > 0.0 { g } else { 0.0 }),
            Nonlinearity::Identity => dh,
        };
        weight_grads[j] = dz.tr_mul(&cache.patches);
        if j > 0 {
            let dpatches = &dz * &net.weights[j];
            da = match spec.prior {
                Prior::None => dpatches,
                Prior::Patch {
                    channels, stride, ..
                } => col2im(&dpatches, n, spec.in_dim, channels, stride, positions),
            };
        }
    }
    Ok(Gradients {
        loss,
        weights: weight_grads,
        readout: readout_grad,
    })
}

fn loss_only(net: &Network, inputs: &Mat, labels: &[usize], mode: StatsMode) -> Result<f64> {
    let n = inputs.nrows();
    let frozen = match mode {
        StatsMode::Frozen => net.frozen_stats()?,
        StatsMode::Batch => None,
    };
    let mut a = inputs.clone();
    for (j, (spec, w)) in net.arch.layers.iter().zip(&net.weights).enumerate() {
        let patches = layer_input(spec, &a);
        let z = &patches * w.transpose();
        let mut h = activate(spec, &z);
        if net.arch.standardize {
            let stats = match frozen {
                Some(s) => s[j].clone(),
                None => column_stats(&h),
            };
            h = standardize(&h, &stats);
        }
        a = fold_positions(&(h * layer_scale(spec)), n, spec.positions());
    }
    Ok(cross_entropy(&(&a * net.readout.transpose()), labels))
}

/// Largest relative error between backpropagated and central finite-difference
/// gradients over a random subset of 200 parameters (all of them when fewer
/// exist). Uses batch statistics when standardization is enabled.
///
/// The denominator `|a| + |n|` is floored at `1e-4 · max |a|` over the
/// subset, so entries far below the gradient scale (beneath finite-difference
/// resolution) are measured against that scale.
pub fn gradient_check(net: &Network, sample: &DataPart, epsilon: f64, seed: u64) -> Result<f64> {
    let mode = StatsMode::Batch;
    let grads = loss_and_gradients(net, &sample.inputs, &sample.labels, mode)?;
    let mut coords: Vec<(usize, usize, usize)> = Vec::new();
    for (j, w) in net.weights.iter().enumerate() {
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                coords.push((j, r, c));
            }
        }
    }
    let readout_layer = net.depth();
    for r in 0..net.readout.nrows() {
        for c in 0..net.readout.ncols() {
            coords.push((readout_layer, r, c));
        }
    }
    let mut rng = rng::stream(seed, "net", "gradient-check", 0);
    coords.shuffle(&mut rng);
    coords.truncate(coords.len().min(200));

    let mut pairs = Vec::with_capacity(coords.len());
    let mut probe = net.clone();
    for &(j, r, c) in &coords {
        let original = if j == readout_layer {
            probe.readout[(r, c)]
        } else {
            probe.weights[j][(r, c)]
        };
        let mut eval = |value: f64| -> Result<f64> {
            if j == readout_layer {
                probe.readout[(r, c)] = value;
            } else {
                probe.weights[j][(r, c)] = value;
            }
            loss_only(&probe, &sample.inputs, &sample.labels, mode)
        };
        let plus = eval(original + epsilon)?;
        let minus = eval(original - epsilon)?;
        eval(original)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = if j == readout_layer {
            grads.readout[(r, c)]
        } else {
            grads.weights[j][(r, c)]
        };
        pairs.push((analytic, numeric));
    }
    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let floor = (1e-4 * scale).max(f64::MIN_POSITIVE);
    Ok(pairs
        .iter()
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(floor))
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    /// Multiplicative decay applied every `step_every` epochs.
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub step_every: usize,
}

fn one() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            gamma: 1.0,
            step_every: 0,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if self.step_every == 0 {
            self.initial
        } else {
            self.initial * self.gamma.powi((epoch / self.step_every) as i32)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: LrSchedule {
                initial: 0.05,
                gamma: 0.1,
                step_every: 20,
            },
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            snapshot_every: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub weights: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrajectory {
    /// Strictly increasing epochs; the first snapshot is the initialization.
    pub snapshots: Vec<Snapshot>,
    pub config: TrainConfig,
}

impl TrainTrajectory {
    pub fn at_epoch(&self, epoch: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.epoch == epoch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetrics {
    /// Mean minibatch loss of every epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Minibatch SGD with momentum and weight decay on softmax cross-entropy.
///
/// Standardization uses batch statistics during training; at the end the
/// statistics are frozen to those of the full train split. Snapshots are taken
/// at epoch 0 and after every `snapshot_every` epochs (never when 0, except
/// the initial and final ones).
pub fn train_sgd(
    net: &Network,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, TrainTrajectory, TrainMetrics)> {
    if cfg.batch_size == 0 {
        return Err(Error::param("batch_size must be ≥ 1"));
    }
    if dataset.n_classes() > net.arch.n_outputs {
        return Err(Error::param(format!(
            "{} classes but only {} network outputs",
            dataset.n_classes(),
            net.arch.n_outputs
        )));
    }
    let train = dataset.train();
    net.check_input(&train.inputs)?;
    let mut model = net.clone();
    // Standard-parameterization factors Vⱼ = sⱼ Wⱼ.
    let scales: Vec<f64> = model
        .weights
        .iter()
        .map(|w| 1.0 / (w.ncols() as f64).sqrt())
        .collect();
    let readout_scale = 1.0 / (model.readout.ncols() as f64).sqrt();
    let mut vel: Vec<Mat> = model.weights.iter().map(|w| Mat::zeros(w.nrows(), w.ncols())).collect();
    let mut vel_readout = Mat::zeros(model.readout.nrows(), model.readout.ncols());

    let mut snapshots = vec![Snapshot {
        epoch: 0,
        weights: model.weights.clone(),
    }];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let min_batch = if model.arch.standardize { 2 } else { 1 };

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        let mut shuffle_rng = rng::stream(cfg.seed, "net", "shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            let xb = crate::data::select_rows(&train.inputs, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let g = loss_and_gradients(&model, &xb, &yb, StatsMode::Batch).map_err(|e| {
                Error::Training {
                    epoch,
                    message: e.to_string(),
                }
            })?;
            total += g.loss;
            batches += 1;
            for j in 0..model.weights.len() {
                let s = scales[j];
                // dL/dV = (dL/dW)/s, decay acts on V = sW.
                let grad_v = &g.weights[j] * (1.0 / s) + &model.weights[j] * (cfg.weight_decay * s);
                vel[j] = &vel[j] * cfg.momentum + grad_v;
                model.weights[j] -= &vel[j] * (lr / s);
            }
            let s = readout_scale;
            let grad_v = &g.readout * (1.0 / s) + &model.readout * (cfg.weight_decay * s);
            vel_readout = &vel_readout * cfg.momentum + grad_v;
            model.readout -= &vel_readout * (lr / s);
        }
        let mean_loss = if batches > 0 { total / batches as f64 } else { 0.0 };
        if !mean_loss.is_finite()
            || model.weights.iter().any(|w| w.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Training {
                epoch,
                message: "non-finite loss or weights".into(),
            });
        }
        epoch_loss.push(mean_loss);
        let done = epoch + 1;
        let periodic = cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0;
        if periodic || done == cfg.epochs {
            snapshots.push(Snapshot {
                epoch: done,
                weights: model.weights.clone(),
            });
        }
    }
    model.fit_norm_stats(&train.inputs)?;
    let train_accuracy = model.accuracy(&train)?;
    let test = dataset.test();
    let test_accuracy = if test.is_empty() { 0.0 } else { model.accuracy(&test)? };
    Ok((
        model,
        TrainTrajectory {
            snapshots,
            config: cfg.clone(),
        },
        TrainMetrics {
            epoch_loss,
            train_accuracy,
            test_accuracy,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_net(d0: usize, widths: &[usize], k: usize, standardize: bool, seed: u64) -> Network {
        init_network(&Architecture::mlp(d0, widths, k, standardize), Init::Gaussian, seed).unwrap()
    }

    #[test]
    fn gaussian_init_has_unit_variance() {
        let net = dense_net(1000, &[50], 2, false, 3);
        let w = net.weights(0);
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn uniform_init_is_bounded() {
        let arch = Architecture::mlp(20, &[30], 2, false);
        let net = init_network(&arch, Init::UniformKaiming, 1).unwrap();
        let bound = 3.0_f64.sqrt();
        assert!(net.weights(0).iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(dense_net(5, &[7, 7], 3, true, 11), dense_net(5, &[7, 7], 3, true, 11));
    }

    #[test]
    fn identity_weights_hand_example() {
        let arch = Architecture::mlp(4, &[4], 1, false);
        let net = Network::from_parts(arch, vec![Mat::identity(4, 4)], Mat::zeros(1, 4), None).unwrap();
        let x = Mat::from_row_slice(1, 4, &[4.0, 4.0, 4.0, 4.0]);
        let a = net.forward(&x, None).unwrap();
        assert!(a[0].iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn zero_input_gives_zero_activations() {
        let net = dense_net(6, &[8, 5], 2, false, 0);
        let a = net.forward(&Mat::zeros(3, 6), None).unwrap();
        assert!(a.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = dense_net(6, &[8], 2, false, 0);
        assert!(matches!(net.forward(&Mat::zeros(3, 5), None), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_stats_is_an_error() {
        let net = dense_net(6, &[8], 2, true, 0);
        assert!(net.forward(&Mat::zeros(3, 6), None).is_err());
    }

    #[test]
    fn patch_prior_small_cases() {
        let x = Mat::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let set = ActivationSet::new(x.clone(), 0, None, false);
        let layout = SpatialLayout {
            channels: 1,
            length: 4,
        };
        let (out, l) = apply_patch_prior(&set, layout, 2, 2).unwrap();
        assert_eq!(l.length, 2);
        assert_eq!(out.values, Mat::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]));
        let (full, l) = apply_patch_prior(&set, layout, 4, 4).unwrap();
        assert_eq!(l.length, 1);
        assert_eq!(full.values, x);
        let (win1, l) = apply_patch_prior(&set, layout, 1, 1).unwrap();
        assert_eq!((l.channels, l.length), (1, 4));
        assert_eq!(win1.values, x);
        assert!(apply_patch_prior(&set, layout, 5, 1).is_err());
    }

    #[test]
    fn standard_roundtrip_preserves_logits() {
        let mut net = dense_net(5, &[9, 6], 3, true, 2);
        let x = crate::linalg::gaussian_matrix(20, 5, &mut rng::stream(0, "t", "x", 0));
        net.fit_norm_stats(&x).unwrap();
        let (w, r) = net.to_standard();
        let back = Network::normalize_convention(
            net.arch().clone(),
            &w,
            &r,
            net.norm_stats().map(|s| s.to_vec()),
        )
        .unwrap();
        let a = net.logits(&x).unwrap();
        let b = back.logits(&x).unwrap();
        assert!((a - b).abs().max() < 1e-12);
    }

    #[test]
    fn save_load_roundtrip() {
        let mut net = dense_net(4, &[6, 5], 2, true, 8);
        let x = crate::linalg::gaussian_matrix(10, 4, &mut rng::stream(1, "t", "x", 0));
        net.fit_norm_stats(&x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path()).unwrap();
        assert_eq!(Network::load(dir.path()).unwrap(), net);
    }
}
