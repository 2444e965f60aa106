//! CSV tables, manifests and acceptance checks of experiment reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub file: String,
    pub description: String,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// `columns` are `(name, unit)` pairs.
    pub fn new(file: &str, description: &str, columns: &[(&str, &str)]) -> Self {
        Self {
            schema: TableSchema {
                file: file.into(),
                description: description.into(),
                columns: columns
                    .iter()
                    .map(|(n, u)| Column {
                        name: (*n).into(),
                        unit: (*u).into(),
                    })
                    .collect(),
            },
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.schema.columns.len());
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(&self.schema.file);
        let map = |e: csv::Error| Error::Report(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(map)?;
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))
            .map_err(map)?;
        for row in &self.rows {
            w.write_record(row).map_err(map)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.schema
            .columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Report(format!("{} has no column `{name}`", self.schema.file)))
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse::<f64>().map_err(|_| {
                    Error::Report(format!(
                        "{} line {}: `{}` is not a number",
                        self.schema.file,
                        i + 2,
                        r[c]
                    ))
                })
            })
            .collect()
    }

    pub fn strings(&self, name: &str) -> Result<Vec<String>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c].clone()).collect())
    }
}

/// Reads a table and validates it against its schema. Errors name the file
/// and the 1-based line.
pub fn read_table(dir: &Path, schema: &TableSchema) -> Result<Table> {
    let path = dir.join(&schema.file);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&path)
        .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Report(format!("{} line {line}: {e}", schema.file)))?;
        if rec.len() != expected.len() {
            return Err(Error::Report(format!(
                "{} line {line}: expected {} columns, found {}",
                schema.file,
                expected.len(),
                rec.len()
            )));
        }
        if i == 0 {
            let header: Vec<&str> = rec.iter().collect();
            if header != expected {
                return Err(Error::Report(format!(
                    "{} line 1: header {:?} does not match {:?}",
                    schema.file, header, expected
                )));
            }
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    if rows.is_empty() && reader.position().line() == 1 {
        return Err(Error::Report(format!("{}: empty table", schema.file)));
    }
    Ok(Table {
        schema: schema.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub library_version: String,
    pub seeds: Vec<u64>,
    pub wall_time_secs: f64,
    pub tables: Vec<TableSchema>,
    pub checks: Vec<Check>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub dir: std::path::PathBuf,
    pub manifest: Manifest,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.manifest.checks.iter().all(|c| c.passed)
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    io::write_toml(&dir.join(MANIFEST), manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Report(format!("missing manifest {}", path.display())));
    }
    io::read_toml(&path)
}

/// Number of `i` with `v[i+1] ≥ v[i]`.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| !(w[1] < w[0])).count()
}

/// Groups `value` by the string key columns, keeping first-seen order of the
/// keys and averaging values.
pub fn grouped_means(table: &Table, keys: &[&str], value: &str) -> Result<Vec<(Vec<String>, f64)>> {
    let key_cols: Vec<usize> = keys.iter().map(|k| table.column(k)).collect::<Result<_>>()?;
    let vals = table.numbers(value)?;
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut acc: BTreeMap<Vec<String>, (f64, usize)> = BTreeMap::new();
    for (row, v) in table.rows.iter().zip(vals) {
        let key: Vec<String> = key_cols.iter().map(|&c| row[c].clone()).collect();
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0)
        });
        e.0 += v;
        e.1 += 1;
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let (s, n) = acc[&k];
            (k, s / n as f64)
        })
        .collect())
}

/// Series of `value` along `axis` (ascending numerically) for every value of
/// `group`, averaging duplicates.
pub fn series_by(table: &Table, group: &str, axis: &str, value: &str) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let means = grouped_means(table, &[group, axis], value)?;
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (key, v) in means {
        let x: f64 = key[1]
            .parse()
            .map_err(|_| Error::Report(format!("{}: `{}` is not numeric", table.schema.file, key[1])))?;
        out.entry(key[0].clone()).or_default().push((x, v));
    }
    for s in out.values_mut() {
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

fn trend_checks(table: &Table, group: &str, axis: &str, value: &str, label: &str) -> Result<Vec<Check>> {
    Ok(series_by(table, group, axis, value)?
        .into_iter()
        .map(|(g, s)| {
            let vals: Vec<f64> = s.iter().map(|p| p.1).collect();
            let inv = inversions(&vals);
            Check::new(
                format!("{label} decreases with {axis} ({group} {g})"),
                inv <= 1,
                format!("{vals:.4?}, {inv} inversion(s)"),
            )
        })
        .collect())
}

fn table<'a>(tables: &'a BTreeMap<String, Table>, file: &str) -> Result<&'a Table> {
    tables
        .get(file)
        .ok_or_else(|| Error::Report(format!("missing table {file}")))
}

/// Acceptance checks of an experiment, computed from its tables.
pub fn evaluate(kind: ExperimentKind, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    match kind {
        ExperimentKind::Convergence => trend_checks(
            table(tables, "convergence.csv")?,
            "layer",
            "width",
            "relative_error",
            "test alignment error",
        ),
        ExperimentKind::Covariance => trend_checks(
            table(tables, "covariance.csv")?,
            "layer",
            "width",
            "relative_distance",
            "covariance distance",
        ),
        ExperimentKind::Spectra => {
            let t = table(tables, "spectra_fit.csv")?;
            let alphas = t.numbers("alpha")?;
            let layers = t.strings("layer")?;
            let widths = t.strings("width")?;
            Ok(alphas
                .iter()
                .zip(layers.iter().zip(&widths))
                .map(|(a, (l, w))| {
                    Check::new(
                        format!("power-law fit (layer {l}, width {w})"),
                        a.is_finite() && *a > 0.0,
                        format!("alpha = {a:.3}"),
                    )
                })
                .collect())
        }
        ExperimentKind::KpcaApprox => {
            let t = table(tables, "kpca_approx.csv")?;
            let means = grouped_means(t, &["layer", "basis"], "variance_fraction")?;
            let get = |layer: &str, basis: &str| {
                means
                    .iter()
                    .find(|(k, _)| k[0] == layer && k[1] == basis)
                    .map(|(_, v)| *v)
            };
            let mut layers: Vec<String> = means.iter().map(|(k, _)| k[0].clone()).collect();
            layers.dedup();
            Ok(layers
                .iter()
                .map(|l| {
                    let k = get(l, "kpca").unwrap_or(f64::NAN);
                    let r = get(l, "random").unwrap_or(f64::NAN);
                    Check::new(
                        format!("KPCA basis captures more weight variance than random (layer {l})"),
                        k > r,
                        format!("mean captured fraction kpca {k:.3} vs random {r:.3}"),
                    )
                })
                .collect())
        }
        ExperimentKind::Gaussianity => {
            let t = table(tables, "mp.csv")?;
            let means = grouped_means(t, &["layer"], "outlier_fraction")?;
            Ok(means
                .into_iter()
                .map(|(k, v)| {
                    Check::new(
                        format!("whitened weights follow Marchenko-Pastur bulk (layer {})", k[0]),
                        v <= 0.25,
                        format!("mean outlier fraction {v:.3} (threshold 0.25)"),
                    )
                })
                .collect())
        }
        ExperimentKind::Resample => {
            let t = table(tables, "resample.csv")?;
            let widths = t.numbers("width")?;
            let trained = t.numbers("trained_accuracy")?;
            let realign = t.numbers("sampled_realign_accuracy")?;
            let retrain = t.numbers("sampled_retrain_accuracy")?;
            let chance = t.numbers("chance")?;
            let mut order: Vec<usize> = (0..widths.len()).collect();
            order.sort_by(|&a, &b| widths[a].total_cmp(&widths[b]));
            let gaps: Vec<f64> = order.iter().map(|&i| trained[i] - realign[i]).collect();
            let inv = inversions(&gaps);
            let mut checks = vec![Check::new(
                "trained − sampled gap shrinks with width",
                inv <= 1,
                format!("gaps {gaps:.4?}, {inv} inversion(s)"),
            )];
            for &i in &order {
                checks.push(Check::new(
                    format!("sampled accuracy above chance (width {})", widths[i]),
                    realign[i] > chance[i],
                    format!("{:.4} vs chance {:.4}", realign[i], chance[i]),
                ));
                checks.push(Check::new(
                    format!("retrained ≥ realigned (width {})", widths[i]),
                    retrain[i] >= realign[i],
                    format!("{:.4} vs {:.4}", retrain[i], realign[i]),
                ));
            }
            Ok(checks)
        }
        ExperimentKind::Dynamics => {
            let t = table(tables, "dynamics_residual.csv")?;
            let res = series_by(t, "layer", "epoch", "residual")?;
            let base = series_by(t, "layer", "epoch", "baseline_residual")?;
            Ok(res
                .into_iter()
                .map(|(l, s)| {
                    let r = s.last().map(|p| p.1).unwrap_or(f64::NAN);
                    let b = base[&l].last().map(|p| p.1).unwrap_or(f64::NAN);
                    Check::new(
                        format!("amplification explains part of the motion (layer {l})"),
                        r < b,
                        format!("final residual {r:.4} vs ‖W(T)−W(0)‖/‖W(T)‖ {b:.4}, mean over seeds"),
                    )
                })
                .collect())
        }
        ExperimentKind::Equivariance => {
            let t = table(tables, "equivariance.csv")?;
            let kinds = t.strings("kind")?;
            let groups = t.strings("group")?;
            let layers = t.strings("layer")?;
            let widths = t.numbers("width")?;
            let devs = t.numbers("max_deviation")?;
            let mut checks = Vec::new();
            let mut sampled: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
            for i in 0..kinds.len() {
                if kinds[i] == "analytic" {
                    checks.push(Check::new(
                        format!("analytic kernel invariant ({} group, layer {})", groups[i], layers[i]),
                        devs[i] <= 1e-10,
                        format!("max deviation {:e}", devs[i]),
                    ));
                } else {
                    sampled
                        .entry((groups[i].clone(), layers[i].clone()))
                        .or_default()
                        .push((widths[i], devs[i]));
                }
            }
            for ((g, l), mut s) in sampled {
                s.sort_by(|a, b| a.0.total_cmp(&b.0));
                let vals: Vec<f64> = s.iter().map(|p| p.1).collect();
                let inv = inversions(&vals);
                checks.push(Check::new(
                    format!("finite-width deviation decreases ({g} group, layer {l})"),
                    inv <= 1,
                    format!("{vals:.4?}, {inv} inversion(s)"),
                ));
            }
            Ok(checks)
        }
    }
}

pub struct Summary {
    pub text: String,
    pub passed: bool,
}

/// Validates every table listed in the manifest and re-derives the checks.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let manifest = read_manifest(dir)?;
    let missing: Vec<&str> = manifest
        .tables
        .iter()
        .filter(|t| !dir.join(&t.file).exists())
        .map(|t| t.file.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Report(format!("missing tables: {}", missing.join(", "))));
    }
    let mut tables = BTreeMap::new();
    for schema in &manifest.tables {
        tables.insert(schema.file.clone(), read_table(dir, schema)?);
    }
    let checks = evaluate(manifest.experiment, &tables)?;
    let mut text = format!(
        "experiment {} (rainbow-lab {}), seeds {:?}, {:.1}s\n",
        manifest.experiment.name(),
        manifest.library_version,
        manifest.seeds,
        manifest.wall_time_secs
    );
    for c in &checks {
        text.push_str(&format!(
            "[{}] {}: {}\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    Ok(Summary {
        passed: checks.iter().all(|c| c.passed),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[3.0, 2.0, 1.0]), 0);
        assert_eq!(inversions(&[3.0, 3.0, 1.0]), 1);
        assert_eq!(inversions(&[1.0, 2.0, 3.0]), 2);
    }
}
