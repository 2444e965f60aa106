//! Experiment configuration (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::net::{Init, LrSchedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    Covariance,
    Spectra,
    KpcaApprox,
    Gaussianity,
    Resample,
    Dynamics,
    Equivariance,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Convergence,
        ExperimentKind::Covariance,
        ExperimentKind::Spectra,
        ExperimentKind::KpcaApprox,
        ExperimentKind::Gaussianity,
        ExperimentKind::Resample,
        ExperimentKind::Dynamics,
        ExperimentKind::Equivariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Covariance => "covariance",
            ExperimentKind::Spectra => "spectra",
            ExperimentKind::KpcaApprox => "kpca-approx",
            ExperimentKind::Gaussianity => "gaussianity",
            ExperimentKind::Resample => "resample",
            ExperimentKind::Dynamics => "dynamics",
            ExperimentKind::Equivariance => "equivariance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Number of hidden layers.
    pub depth: usize,
    pub base_width: usize,
    /// Width scaling factors `s`; layer widths are `s · base_width`.
    pub width_scales: Vec<usize>,
    pub standardize: bool,
    pub init: Init,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_width: 32,
            width_scales: vec![1, 2, 4, 8],
            standardize: true,
            init: Init::Gaussian,
        }
    }
}

impl ArchitectureConfig {
    pub fn widths(&self) -> Vec<usize> {
        self.width_scales.iter().map(|s| s * self.base_width).collect()
    }

    pub fn max_width(&self) -> usize {
        self.widths().into_iter().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_gamma: f64,
    /// Epochs between learning-rate decays; 0 keeps it constant.
    pub lr_step: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs between weight snapshots; 0 keeps only the first and last.
    pub snapshot_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.lr.initial,
            lr_gamma: t.lr.gamma,
            lr_step: t.lr.step_every,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            snapshot_every: 5,
        }
    }
}

impl TrainingConfig {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: LrSchedule {
                initial: self.lr,
                gamma: self.lr_gamma,
                step_every: self.lr_step,
            },
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            snapshot_every: self.snapshot_every,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// Sign flips of the first `flip_coords` input coordinates.
    SignFlip,
    /// Cyclic shifts of all input coordinates.
    CyclicShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Width scale of the reference network; defaults to the largest.
    pub reference_scale: Option<usize>,
    pub mp_margin: f64,
    /// Leading ranks analyzed by the dynamics experiment.
    pub dynamics_ranks: usize,
    /// 1-based ranks whose weight marginals are tested.
    pub marginal_ranks: Vec<usize>,
    /// Ranks of the projection sweeps in `kpca-approx`.
    pub projection_ranks: Vec<usize>,
    /// Networks sampled per width in `resample`.
    pub sample_draws: usize,
    pub groups: Vec<GroupKind>,
    pub flip_coords: usize,
    pub max_group_order: usize,
    pub n_pairs: usize,
    /// Widths of the sampled networks in `equivariance`.
    pub equivariance_widths: Vec<usize>,
    /// Weight draws averaged per width in `equivariance`.
    pub equivariance_draws: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            reference_scale: None,
            mp_margin: crate::rainbow::MP_MARGIN,
            dynamics_ranks: crate::dynamics::DEFAULT_RANKS,
            marginal_ranks: vec![1, 2, 4, 8, 16, 32],
            projection_ranks: vec![1, 2, 4, 8, 16, 32],
            sample_draws: 3,
            groups: vec![GroupKind::SignFlip, GroupKind::CyclicShift],
            flip_coords: 4,
            max_group_order: 256,
            n_pairs: 50,
            equivariance_widths: vec![64, 128, 256, 512],
            equivariance_draws: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentKind,
    pub output_dir: PathBuf,
    /// One network per seed at every width; ensembles use all seeds.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn new(name: ExperimentKind, output_dir: impl Into<PathBuf>, seeds: Vec<u64>) -> Self {
        Self {
            name,
            output_dir: output_dir.into(),
            seeds,
            data_seed: 0,
            dataset: DatasetSpec::default(),
            architecture: ArchitectureConfig::default(),
            training: TrainingConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn reference_width(&self) -> usize {
        match self.analysis.reference_scale {
            Some(s) => s * self.architecture.base_width,
            None => self.architecture.max_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let a = &self.architecture;
        if a.depth == 0 || a.base_width == 0 {
            return bad("depth and base_width must be ≥ 1".into());
        }
        if a.width_scales.is_empty() || a.width_scales.contains(&0) {
            return bad("width_scales must be non-empty and positive".into());
        }
        let mut sorted = a.width_scales.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != a.width_scales.len() {
            return bad("width_scales must be distinct".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if let Some(s) = self.analysis.reference_scale {
            if !a.width_scales.contains(&s) {
                return bad(format!("reference_scale {s} not among width_scales"));
            }
        }
        let t = &self.training;
        if t.batch_size == 0 || !(t.lr >= 0.0) || !(t.momentum >= 0.0) || !(t.weight_decay >= 0.0) {
            return bad("training hyperparameters must be non-negative, batch_size ≥ 1".into());
        }
        let an = &self.analysis;
        if an.marginal_ranks.contains(&0) || an.projection_ranks.contains(&0) {
            return bad("ranks are 1-based".into());
        }
        if an.sample_draws == 0 || an.equivariance_draws == 0 || an.n_pairs == 0 {
            return bad("draw and pair counts must be ≥ 1".into());
        }
        if self.name == ExperimentKind::Equivariance && an.equivariance_widths.is_empty() {
            return bad("equivariance_widths must be non-empty".into());
        }
        Ok(())
    }
}
