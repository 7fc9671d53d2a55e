//! On-disk dataset archive: one directory per dataset holding `data.csv`
//! (header row of variate names, one row per time step, oldest first) and
//! `meta.json` (name, frequency, optional period override, train/test split).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::domain::{autocorrelation_period, lookup_period};
use crate::error::{Error, Result};

/// Sidecar metadata for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// Dataset name; must match its directory name.
    pub name: String,
    /// Sampling frequency token, e.g. `H` or `15min`.
    pub frequency: String,
    /// Explicit period override; wins over frequency lookup and inference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    /// First row index reserved for evaluation; training windows end at or
    /// before this row.
    pub train_end: usize,
}

/// One dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Metadata.
    pub meta: DatasetMeta,
    /// Variate names, one per value column.
    pub variates: Vec<String>,
    /// Values, `(rows, variates)`, oldest row first.
    pub values: Array2<f64>,
}

impl Dataset {
    /// Validates shapes, finiteness, and the train/test split.
    pub fn new(meta: DatasetMeta, variates: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::data(format!("dataset {} is empty", meta.name)));
        }
        if variates.len() != cols {
            return Err(Error::data(format!(
                "dataset {} has {} variate names for {cols} columns",
                meta.name,
                variates.len()
            )));
        }
        if let Some((r, c)) = values
            .indexed_iter()
            .find_map(|((r, c), v)| (!v.is_finite()).then_some((r, c)))
        {
            return Err(Error::data(format!(
                "dataset {}: non-finite value at row {r}, column {}",
                meta.name, variates[c]
            )));
        }
        if meta.train_end == 0 || meta.train_end > rows {
            return Err(Error::data(format!(
                "dataset {}: train_end {} outside (0, {rows}]",
                meta.name, meta.train_end
            )));
        }
        if meta.period == Some(0) {
            return Err(Error::data(format!("dataset {}: period override is zero", meta.name)));
        }
        Ok(Self { meta, variates, values })
    }

    /// Rows before the train/test split.
    pub fn train_region(&self) -> ArrayView2<'_, f64> {
        self.values.slice(s![..self.meta.train_end, ..])
    }
}

/// A named collection of datasets, ordered by name.
#[derive(Debug, Clone)]
pub struct Archive {
    /// Datasets sorted by name.
    pub datasets: Vec<Dataset>,
}

impl Archive {
    /// Reads every dataset directory under `root`.
    ///
    /// # Errors
    /// Fails on unreadable files, malformed CSV/JSON, or invalid datasets.
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::data(format!("archive root {} is not a directory", root.display())));
        }
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut datasets = Vec::with_capacity(dirs.len());
        for dir in dirs {
            datasets.push(read_dataset(&dir)?);
        }
        if datasets.is_empty() {
            return Err(Error::data(format!("archive {} holds no datasets", root.display())));
        }
        Ok(Self { datasets })
    }

    /// Looks a dataset up by name.
    ///
    /// # Errors
    /// Fails when no dataset carries the name.
    pub fn get(&self, name: &str) -> Result<&Dataset> {
        self.datasets.iter().find(|d| d.meta.name == name).ok_or_else(|| {
            Error::data(format!(
                "archive has no dataset named {name}; available: {}",
                self.datasets.iter().map(|d| d.meta.name.as_str()).collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

/// Reads one dataset directory (`data.csv` + `meta.json`).
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::data(format!("{}: {e}", meta_path.display())))?;
    let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if meta.name != dir_name {
        return Err(Error::data(format!(
            "dataset directory {dir_name} holds metadata named {}",
            meta.name
        )));
    }

    let csv_path = dir.join("data.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&csv_path)
        .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;
    let variates: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;
        if record.len() != variates.len() {
            return Err(Error::data(format!(
                "{}: row {r} has {} fields, header has {}",
                csv_path.display(),
                record.len(),
                variates.len()
            )));
        }
        for field in record.iter() {
            rows.push(field.trim().parse::<f64>().map_err(|_| {
                Error::data(format!("{}: row {r}: bad number {field:?}", csv_path.display()))
            })?);
        }
        n_rows += 1;
    }
    let values = Array2::from_shape_vec((n_rows, variates.len()), rows)
        .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;
    Dataset::new(meta, variates, values)
}

/// Writes one dataset directory under `root`, creating it as needed. Values
/// are written with 17 significant digits so doubles round-trip losslessly.
pub fn write_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    let dir = root.join(&dataset.meta.name);
    std::fs::create_dir_all(&dir)?;
    let meta_text = serde_json::to_string_pretty(&dataset.meta)
        .map_err(|e| Error::data(format!("cannot encode metadata: {e}")))?;
    std::fs::write(dir.join("meta.json"), meta_text + "\n")?;

    let csv_path = dir.join("data.csv");
    let mut writer = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;
    writer
        .write_record(&dataset.variates)
        .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;
    for row in dataset.values.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writer
            .write_record(&fields)
            .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CachedPeriod {
    rows: usize,
    cols: usize,
    period: usize,
}

/// Resolves a dataset's period: metadata override, then frequency lookup,
/// then autocorrelation over the training region. Derived values can be
/// cached in a JSON file keyed by dataset name; entries are invalidated when
/// the data shape changes.
///
/// # Errors
/// Fails only on cache I/O problems when writing a fresh entry.
pub fn resolve_period(dataset: &Dataset, cache: Option<&Path>) -> Result<usize> {
    if let Some(p) = dataset.meta.period {
        return Ok(p);
    }
    if let Some(p) = lookup_period(&dataset.meta.frequency) {
        return Ok(p);
    }
    let (rows, cols) = dataset.train_region().dim();
    let mut table: BTreeMap<String, CachedPeriod> = match cache {
        Some(path) if path.exists() => match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
                log::warn!("ignoring unreadable period cache {}: {e}", path.display());
                BTreeMap::new()
            }),
            Err(e) => {
                log::warn!("ignoring unreadable period cache {}: {e}", path.display());
                BTreeMap::new()
            }
        },
        _ => BTreeMap::new(),
    };
    if let Some(hit) = table.get(&dataset.meta.name) {
        if hit.rows == rows && hit.cols == cols {
            return Ok(hit.period);
        }
    }
    let period = autocorrelation_period(&dataset.train_region().to_owned());
    if let Some(path) = cache {
        table.insert(dataset.meta.name.clone(), CachedPeriod { rows, cols, period });
        let text = serde_json::to_string_pretty(&table)
            .map_err(|e| Error::data(format!("cannot encode period cache: {e}")))?;
        std::fs::write(path, text + "\n")?;
    }
    Ok(period)
}
