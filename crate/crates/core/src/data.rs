//! Datasets: seeded synthetic generators and tabular/IDX ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::net::{self, Init, LayerSpec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, String>,
}

/// Labeled samples with a train/test split. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Mat,
    labels: Vec<usize>,
    split: Vec<Split>,
    n_classes: usize,
    meta: DatasetMeta,
}

/// Rows of one split, in dataset order.
#[derive(Debug, Clone)]
pub struct DataPart {
    pub inputs: Mat,
    pub labels: Vec<usize>,
}

impl DataPart {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(
        inputs: Mat,
        labels: Vec<usize>,
        split: Vec<Split>,
        n_classes: usize,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = inputs.nrows();
        if labels.len() != n || split.len() != n {
            return Err(Error::shape(format!(
                "{} input rows, {} labels, {} split tags",
                n,
                labels.len(),
                split.len()
            )));
        }
        if let Some(row) = (0..n).find(|&r| inputs.row(r).iter().any(|x| !x.is_finite())) {
            return Err(Error::Data(format!("row {row} has a non-finite entry")));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Data(format!(
                "label {l} at row {i} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            split,
            n_classes,
            meta,
        })
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split_tags(&self) -> &[Split] {
        &self.split
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn part(&self, split: Split) -> DataPart {
        let idx = self.indices(split);
        let inputs = select_rows(&self.inputs, &idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        DataPart { inputs, labels }
    }

    pub fn train(&self) -> DataPart {
        self.part(Split::Train)
    }

    pub fn test(&self) -> DataPart {
        self.part(Split::Test)
    }
}

pub fn select_rows(m: &Mat, idx: &[usize]) -> Mat {
    Mat::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub d0: usize,
    pub n_classes: usize,
    pub n_per_class: usize,
    pub separation: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.5
}

impl Default for MixtureParams {
    /// Desk-scale default: 32 dimensions, 4 classes, 2000 train / 2000 test.
    fn default() -> Self {
        Self {
            d0: 32,
            n_classes: 4,
            n_per_class: 1000,
            separation: 2.0,
            test_fraction: 0.5,
        }
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::param(format!("test_fraction {f} outside [0, 1]")));
    }
    Ok(())
}

fn n_train_of(n: usize, test_fraction: f64) -> usize {
    n - (n as f64 * test_fraction).round() as usize
}

/// Class-conditional unit-covariance Gaussians. Class means have norm
/// `separation`; they are orthonormal directions when `n_classes ≤ d0` and
/// random unit directions otherwise. Within each class the first
/// `(1 − test_fraction)` share of samples is train, the rest test.
pub fn generate_gaussian_mixture(params: &MixtureParams, seed: u64) -> Result<Dataset> {
    let MixtureParams {
        d0,
        n_classes,
        n_per_class,
        separation,
        test_fraction,
    } = *params;
    if d0 < 1 {
        return Err(Error::param("d0 must be at least 1"));
    }
    if n_classes < 2 {
        return Err(Error::param("n_classes must be at least 2"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::param(format!("separation {separation} must be finite and ≥ 0")));
    }
    check_fraction(test_fraction)?;

    let mut mean_rng = rng::stream(seed, "data", "mixture-means", 0);
    let directions = if n_classes <= d0 {
        linalg::random_orthonormal_columns(d0, n_classes, &mut mean_rng)
    } else {
        let mut g = linalg::gaussian_matrix(d0, n_classes, &mut mean_rng);
        for mut col in g.column_iter_mut() {
            let n = col.norm().max(f64::MIN_POSITIVE);
            col /= n;
        }
        g
    };

    let n = n_classes * n_per_class;
    let n_train = n_train_of(n_per_class, test_fraction);
    let mut inputs = Mat::zeros(n, d0);
    let mut labels = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    for c in 0..n_classes {
        let mut r = rng::stream(seed, "data", "mixture-samples", c as u64);
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            for k in 0..d0 {
                let noise: f64 = r.sample(StandardNormal);
                inputs[(row, k)] = separation * directions[(k, c)] + noise;
            }
            labels.push(c);
            split.push(if i < n_train { Split::Train } else { Split::Test });
        }
    }
    let mut meta = DatasetMeta {
        name: "gaussian_mixture".into(),
        seed: Some(seed),
        params: BTreeMap::new(),
    };
    meta.params.insert("d0".into(), d0.to_string());
    meta.params.insert("n_classes".into(), n_classes.to_string());
    meta.params.insert("n_per_class".into(), n_per_class.to_string());
    meta.params.insert("separation".into(), separation.to_string());
    meta.params.insert("test_fraction".into(), test_fraction.to_string());
    Dataset::new(inputs, labels, split, n_classes, meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherParams {
    pub d0: usize,
    pub width: usize,
    pub depth: usize,
    pub n_samples: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

/// Architecture of the frozen teacher: `depth` ReLU layers of `width`
/// units, no standardization, one output.
pub fn teacher_network(params: &TeacherParams, seed: u64) -> Result<net::Network> {
    if params.width < 1 || params.depth < 1 || params.d0 < 1 {
        return Err(Error::param("teacher needs d0, width, depth ≥ 1"));
    }
    let mut specs = Vec::with_capacity(params.depth);
    let mut fan_in = params.d0;
    for _ in 0..params.depth {
        specs.push(LayerSpec::dense(fan_in, params.width));
        fan_in = params.width;
    }
    let arch = net::Architecture {
        layers: specs,
        n_outputs: 1,
        standardize: false,
    };
    net::init_network(&arch, Init::Gaussian, rng::derive(seed, "data", "teacher"))
}

/// Binary labels `1{f(x) > 0}` of a frozen random bias-free ReLU network
/// evaluated on standard Gaussian inputs.
pub fn generate_teacher_targets(params: &TeacherParams, seed: u64) -> Result<Dataset> {
    check_fraction(params.test_fraction)?;
    let teacher = teacher_network(params, seed)?;
    let mut r = rng::stream(seed, "data", "teacher-inputs", 0);
    let inputs = Mat::from_fn(params.n_samples, params.d0, |_, _| r.sample(StandardNormal));
    let labels: Vec<usize> = if params.n_samples == 0 {
        Vec::new()
    } else {
        let logits = teacher.logits(&inputs)?;
        (0..params.n_samples)
            .map(|i| usize::from(logits[(i, 0)] > 0.0))
            .collect()
    };
    let n_train = n_train_of(params.n_samples, params.test_fraction);
    let split = (0..params.n_samples)
        .map(|i| if i < n_train { Split::Train } else { Split::Test })
        .collect();
    let mut meta = DatasetMeta {
        name: "teacher".into(),
        seed: Some(seed),
        params: BTreeMap::new(),
    };
    meta.params.insert("d0".into(), params.d0.to_string());
    meta.params.insert("width".into(), params.width.to_string());
    meta.params.insert("depth".into(), params.depth.to_string());
    meta.params.insert("n_samples".into(), params.n_samples.to_string());
    Dataset::new(inputs, labels, split, 2, meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum TabularSource {
    /// Header row required. An optional `split_column` holds `train`/`test`.
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default)]
        split_column: Option<String>,
    },
    /// Big-endian IDX image file paired with an IDX label file.
    Idx { images: PathBuf, labels: PathBuf },
}

/// Loads a tabular dataset and standardizes every feature on the train split
/// (zero mean, unit variance; zero-variance features are only centered).
/// Without an explicit split column the last `test_fraction` of rows is test.
pub fn ingest_tabular(source: &TabularSource, test_fraction: f64) -> Result<Dataset> {
    check_fraction(test_fraction)?;
    let (inputs, labels, split, name) = match source {
        TabularSource::Csv {
            path,
            label_column,
            split_column,
        } => {
            let (x, y, s) = read_csv(path, label_column, split_column.as_deref())?;
            (x, y, s, format!("csv:{}", path.display()))
        }
        TabularSource::Idx { images, labels } => {
            let (x, y) = read_idx_pair(images, labels)?;
            let n = y.len();
            (x, y, vec![None; n], format!("idx:{}", images.display()))
        }
    };
    let n = labels.len();
    let n_train = n_train_of(n, test_fraction);
    let split: Vec<Split> = split
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.unwrap_or(if i < n_train { Split::Train } else { Split::Test }))
        .collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(1);
    let mut inputs = inputs;
    standardize_on_train(&mut inputs, &split);
    let mut meta = DatasetMeta {
        name,
        seed: None,
        params: BTreeMap::new(),
    };
    meta.params.insert("test_fraction".into(), test_fraction.to_string());
    Dataset::new(inputs, labels, split, n_classes, meta)
}

fn standardize_on_train(x: &mut Mat, split: &[Split]) {
    let train: Vec<usize> = (0..x.nrows()).filter(|&i| split[i] == Split::Train).collect();
    if train.is_empty() {
        return;
    }
    let nt = train.len() as f64;
    for c in 0..x.ncols() {
        let mean = train.iter().map(|&i| x[(i, c)]).sum::<f64>() / nt;
        let var = train.iter().map(|&i| (x[(i, c)] - mean).powi(2)).sum::<f64>() / nt;
        let scale = if var > 1e-300 { 1.0 / var.sqrt() } else { 1.0 };
        for r in 0..x.nrows() {
            x[(r, c)] = (x[(r, c)] - mean) * scale;
        }
    }
}

type Columns = (Mat, Vec<usize>, Vec<Option<Split>>);

fn read_csv(path: &Path, label_column: &str, split_column: Option<&str>) -> Result<Columns> {
    let fmt_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fmt_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fmt_err(e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| fmt_err(format!("label column `{label_column}` not in header")))?;
    let split_idx = match split_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| fmt_err(format!("split column `{name}` not in header")))?,
        ),
        None => None,
    };
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_idx && Some(i) != split_idx)
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (row, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = row + 2;
        let record = record.map_err(|e| fmt_err(format!("line {line}: {e}")))?;
        if record.len() != headers.len() {
            return Err(fmt_err(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        for &i in &feature_idx {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| fmt_err(format!("line {line}: `{}` is not a number", &record[i])))?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {row} (line {line}) column `{}` is not finite",
                    &headers[i]
                )));
            }
            values.push(v);
        }
        let label: usize = record[label_idx].parse().map_err(|_| {
            fmt_err(format!(
                "line {line}: label `{}` is not a non-negative integer",
                &record[label_idx]
            ))
        })?;
        labels.push(label);
        split.push(match split_idx {
            None => None,
            Some(i) => match record[i].to_ascii_lowercase().as_str() {
                "train" => Some(Split::Train),
                "test" => Some(Split::Test),
                other => return Err(fmt_err(format!("line {line}: unknown split `{other}`"))),
            },
        });
    }
    let n = labels.len();
    let d = feature_idx.len();
    Ok((Mat::from_row_slice(n, d, &values), labels, split))
}

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn read_idx(path: &Path) -> Result<IdxArray> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let fmt_err = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        message: format!("offset {offset}: {message}"),
    };
    if bytes.len() < 4 {
        return Err(fmt_err(0, "file shorter than the IDX magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(fmt_err(0, "magic number must start with two zero bytes".into()));
    }
    let dtype = bytes[2];
    let ndim = bytes[3] as usize;
    let width = match dtype {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        other => return Err(fmt_err(2, format!("unknown IDX type code 0x{other:02x}"))),
    };
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(fmt_err(4, "truncated dimension list".into()));
    }
    let mut cursor = &bytes[4..header];
    let dims: Vec<usize> = (0..ndim)
        .map(|_| cursor.read_u32::<BigEndian>().map(|d| d as usize))
        .collect::<std::io::Result<_>>()?;
    let count: usize = dims.iter().product();
    let expected = header + count * width;
    if bytes.len() != expected {
        return Err(fmt_err(
            header,
            format!("expected {} payload bytes, found {}", count * width, bytes.len() - header),
        ));
    }
    let mut cursor = &bytes[header..];
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = match dtype {
            0x08 => cursor.read_u8()? as f64,
            0x09 => cursor.read_i8()? as f64,
            0x0B => cursor.read_i16::<BigEndian>()? as f64,
            0x0C => cursor.read_i32::<BigEndian>()? as f64,
            0x0D => cursor.read_f32::<BigEndian>()? as f64,
            _ => cursor.read_f64::<BigEndian>()?,
        };
        data.push(v);
    }
    Ok(IdxArray { dims, data })
}

fn read_idx_pair(images: &Path, labels: &Path) -> Result<(Mat, Vec<usize>)> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.is_empty() || lab.dims.len() != 1 {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            message: "label file must be one-dimensional and image file non-empty".into(),
        });
    }
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            message: format!("{} labels for {} images", lab.dims[0], n),
        });
    }
    let d: usize = img.dims[1..].iter().product();
    if let Some(i) = img.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("image {} has a non-finite pixel", i / d.max(1))));
    }
    let labels = lab
        .data
        .iter()
        .map(|&v| {
            if v < 0.0 || v.fract() != 0.0 {
                Err(Error::Data(format!("label {v} is not a class index")))
            } else {
                Ok(v as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Mat::from_row_slice(n, d, &img.data), labels))
}

/// Serializable description of where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    GaussianMixture(MixtureParams),
    Teacher(TeacherParams),
    Tabular {
        source: TabularSource,
        #[serde(default)]
        test_fraction: f64,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::GaussianMixture(MixtureParams::default())
    }
}

impl DatasetSpec {
    pub fn build(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::GaussianMixture(p) => generate_gaussian_mixture(p, seed),
            DatasetSpec::Teacher(p) => generate_teacher_targets(p, seed),
            DatasetSpec::Tabular {
                source,
                test_fraction,
            } => ingest_tabular(source, *test_fraction),
        }
    }
}
