//! Experiment harness: configuration, cached network ensembles, named
//! experiments and reports.

pub mod config;
pub mod report;
mod runs;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{summarize, Report};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::Mat;
use crate::net::{self, Architecture, Network, Snapshot, TrainMetrics, TrainTrajectory};
use crate::rng;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One trained member of an ensemble.
#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub width: usize,
    pub seed: u64,
    pub net: Network,
    pub trajectory: TrainTrajectory,
    pub metrics: TrainMetrics,
}

#[derive(Serialize)]
struct JobKey<'a> {
    code_version: &'static str,
    dataset: &'a crate::data::DatasetSpec,
    data_seed: u64,
    depth: usize,
    width: usize,
    standardize: bool,
    init: net::Init,
    training: &'a config::TrainingConfig,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CachedMeta {
    epochs: Vec<usize>,
    shapes: Vec<(usize, usize)>,
    epoch_loss: Vec<f64>,
    train_accuracy: f64,
    test_accuracy: f64,
}

pub fn architecture(cfg: &ExperimentConfig, dataset: &Dataset, width: usize) -> Architecture {
    Architecture::mlp(
        dataset.dim(),
        &vec![width; cfg.architecture.depth],
        dataset.n_classes(),
        cfg.architecture.standardize,
    )
}

fn job_hash(cfg: &ExperimentConfig, width: usize, seed: u64) -> Result<String> {
    let key = JobKey {
        code_version: VERSION,
        dataset: &cfg.dataset,
        data_seed: cfg.data_seed,
        depth: cfg.architecture.depth,
        width,
        standardize: cfg.architecture.standardize,
        init: cfg.architecture.init,
        training: &cfg.training,
        seed,
    };
    let text = toml::to_string(&key).map_err(|e| Error::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn save_job(dir: &Path, job: &TrainedNet) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(tmp.join("snapshots"))?;
    job.net.save(&tmp.join("network"))?;
    for s in &job.trajectory.snapshots {
        for (j, w) in s.weights.iter().enumerate() {
            io::write_matrix(&tmp.join("snapshots").join(format!("e{}_l{}.bin", s.epoch, j + 1)), w)?;
        }
    }
    let meta = CachedMeta {
        epochs: job.trajectory.snapshots.iter().map(|s| s.epoch).collect(),
        shapes: job.net.all_weights().iter().map(|w| w.shape()).collect(),
        epoch_loss: job.metrics.epoch_loss.clone(),
        train_accuracy: job.metrics.train_accuracy,
        test_accuracy: job.metrics.test_accuracy,
    };
    io::write_toml(&tmp.join("meta.toml"), &meta)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::rename(&tmp, dir)?;
    Ok(())
}

fn load_job(dir: &Path, cfg: &ExperimentConfig, width: usize, seed: u64) -> Result<TrainedNet> {
    let meta: CachedMeta = io::read_toml(&dir.join("meta.toml"))?;
    let net = Network::load(&dir.join("network"))?;
    let snapshots = meta
        .epochs
        .iter()
        .map(|&e| {
            let weights = meta
                .shapes
                .iter()
                .enumerate()
                .map(|(j, &(r, c))| io::read_matrix(&dir.join("snapshots").join(format!("e{e}_l{}.bin", j + 1)), r, c))
                .collect::<Result<Vec<Mat>>>()?;
            Ok(Snapshot { epoch: e, weights })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedNet {
        width,
        seed,
        net,
        trajectory: TrainTrajectory {
            snapshots,
            config: cfg.training.to_train_config(train_seed(seed, width)),
        },
        metrics: TrainMetrics {
            epoch_loss: meta.epoch_loss,
            train_accuracy: meta.train_accuracy,
            test_accuracy: meta.test_accuracy,
        },
    })
}

fn train_seed(seed: u64, width: usize) -> u64 {
    rng::derive(seed, "experiment", &format!("train-w{width}"))
}

fn init_seed(seed: u64, width: usize) -> u64 {
    rng::derive(seed, "experiment", &format!("init-w{width}"))
}

/// Trains one network, or loads it from `output_dir/.cache`.
pub fn train_job(cfg: &ExperimentConfig, dataset: &Dataset, width: usize, seed: u64) -> Result<TrainedNet> {
    let dir = cfg.output_dir.join(".cache").join(job_hash(cfg, width, seed)?);
    if dir.join("meta.toml").exists() {
        if let Ok(job) = load_job(&dir, cfg, width, seed) {
            return Ok(job);
        }
    }
    let arch = architecture(cfg, dataset, width);
    let init = net::init_network(&arch, cfg.architecture.init, init_seed(seed, width))?;
    let tc = cfg.training.to_train_config(train_seed(seed, width));
    let (net, trajectory, metrics) = net::train_sgd(&init, dataset, &tc)?;
    let job = TrainedNet {
        width,
        seed,
        net,
        trajectory,
        metrics,
    };
    std::fs::create_dir_all(dir.parent().expect("cache root"))?;
    save_job(&dir, &job)?;
    Ok(job)
}

/// Trains every `(width, seed)` job concurrently; results keep job order.
pub fn train_ensemble(cfg: &ExperimentConfig, dataset: &Dataset, jobs: &[(usize, u64)]) -> Result<Vec<TrainedNet>> {
    jobs.par_iter()
        .map(|&(w, s)| train_job(cfg, dataset, w, s))
        .collect()
}

/// Writes tables as soon as they are produced so partial outputs survive a
/// failing stage.
pub(crate) struct Sink {
    dir: PathBuf,
    tables: Vec<report::TableSchema>,
    written: BTreeMap<String, report::Table>,
}

impl Sink {
    fn emit(&mut self, table: report::Table) -> Result<()> {
        table.write(&self.dir)?;
        self.tables.push(table.schema.clone());
        self.written.insert(table.schema.file.clone(), table);
        Ok(())
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let dataset = cfg.dataset.build(cfg.data_seed).map_err(|e| e.in_stage("dataset"))?;
    let mut sink = Sink {
        dir: dir.clone(),
        tables: Vec::new(),
        written: BTreeMap::new(),
    };
    runs::run(cfg, &dataset, &mut sink)?;
    let mut loaded = BTreeMap::new();
    for schema in &sink.tables {
        loaded.insert(schema.file.clone(), report::read_table(&dir, schema)?);
    }
    let checks = report::evaluate(cfg.name, &loaded).map_err(|e| e.in_stage("evaluate"))?;
    let manifest = report::Manifest {
        experiment: cfg.name,
        library_version: VERSION.into(),
        seeds: cfg.seeds.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        tables: sink.tables,
        checks,
        config: cfg.clone(),
    };
    report::write_manifest(&dir, &manifest)?;
    Ok(Report { dir, manifest })
}

/// Dataset recipe stored next to a saved rainbow model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDataset {
    pub data_seed: u64,
    pub dataset: crate::data::DatasetSpec,
}

pub const MODEL_DATASET: &str = "dataset.toml";

pub fn save_model_dataset(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    io::write_toml(
        &dir.join(MODEL_DATASET),
        &ModelDataset {
            data_seed: cfg.data_seed,
            dataset: cfg.dataset.clone(),
        },
    )
}

pub fn load_model_dataset(dir: &Path) -> Result<Dataset> {
    let m: ModelDataset = io::read_toml(&dir.join(MODEL_DATASET))?;
    m.dataset.build(m.data_seed)
}
