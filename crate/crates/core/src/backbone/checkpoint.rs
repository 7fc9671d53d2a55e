//! Checkpoint archive: magic bytes, a JSON manifest of named tensors, and a
//! flat little-endian f64 blob.
//!
//! Layout: `b"VIFCKPT1"`, then the manifest byte length as a little-endian
//! u64, then the manifest JSON, then every tensor's values concatenated in
//! manifest order. Manifest `offset`/`len` count f64 elements within the
//! blob. Positional tables are recomputed on load, never stored. A file
//! saved from a single-head model can be loaded into an `h`-head one: the
//! lone head is copied into every head slot (name mapping `head.{i}.*` →
//! `head.0.*`); all other architecture fields must match exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{DEFAULT_EPS, DEFAULT_R, PIXEL_MEAN, PIXEL_STD};

use super::{Model, ModelConfig, Parameters};

const MAGIC: &[u8; 8] = b"VIFCKPT1";

/// Normalization and pixel-bound constants frozen into a checkpoint so
/// inference filters exactly as training did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    /// Per-channel pixel mean.
    pub pixel_mean: [f64; 3],
    /// Per-channel pixel standard deviation.
    pub pixel_std: [f64; 3],
    /// Normalization scale factor.
    pub r: f64,
    /// Standard-deviation floor.
    pub eps: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self { pixel_mean: PIXEL_MEAN, pixel_std: PIXEL_STD, r: DEFAULT_R, eps: DEFAULT_EPS }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    model: ModelConfig,
    filter: FilterSettings,
    tensors: Vec<TensorRecord>,
}

/// Writes a model checkpoint.
///
/// # Errors
/// Fails on serialization or I/O problems.
pub fn save(path: &Path, model: &Model, filter: &FilterSettings) -> Result<()> {
    let slots = model.params.tensors();
    let mut records = Vec::with_capacity(slots.len());
    let mut offset = 0usize;
    for slot in &slots {
        records.push(TensorRecord {
            name: slot.name.clone(),
            shape: slot.shape.clone(),
            dtype: "f64".into(),
            offset,
            len: slot.data.len(),
        });
        offset += slot.data.len();
    }
    let manifest = Manifest {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        model: model.cfg.clone(),
        filter: filter.clone(),
        tensors: records,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::data(format!("cannot encode checkpoint manifest: {e}")))?;
    let mut bytes =
        Vec::with_capacity(16 + manifest_bytes.len() + offset * std::mem::size_of::<f64>());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest_bytes);
    for slot in &slots {
        for v in slot.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)
        .map_err(|e| Error::data(format!("cannot write checkpoint {}: {e}", path.display())))?;
    Ok(())
}

/// Reads only the manifest's model and filter settings.
///
/// # Errors
/// Fails on a malformed file.
pub fn read_header(path: &Path) -> Result<(ModelConfig, FilterSettings)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let (manifest, _) = parse(&bytes, path)?;
    Ok((manifest.model, manifest.filter))
}

/// Loads a checkpoint into a model of architecture `cfg`. The file's
/// architecture must match `cfg` exactly, except that a single-head file may
/// seed any odd head count (the pretrained head is replicated) and the init
/// seed may differ.
///
/// # Errors
/// Fails on malformed files, architecture mismatches, or any tensor whose
/// name or shape disagrees with the target; never returns partial state.
pub fn load(path: &Path, cfg: &ModelConfig) -> Result<(Model, FilterSettings)> {
    cfg.validate()?;
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let (manifest, blob) = parse(&bytes, path)?;

    let replicate_heads = manifest.model.h == 1 && cfg.h > 1;
    let mut file_arch = manifest.model.clone();
    file_arch.h = cfg.h;
    file_arch.seed = cfg.seed;
    if !(manifest.model.h == cfg.h || replicate_heads) || file_arch != *cfg {
        return Err(Error::config(format!(
            "checkpoint architecture {:?} does not fit the requested {:?}",
            manifest.model, cfg
        )));
    }

    let mut by_name = std::collections::BTreeMap::new();
    for record in &manifest.tensors {
        if record.dtype != "f64" {
            return Err(Error::data(format!(
                "tensor {} has unsupported dtype {}",
                record.name, record.dtype
            )));
        }
        if record.len != record.shape.iter().product::<usize>()
            || record.offset + record.len > blob.len()
        {
            return Err(Error::data(format!(
                "tensor {} points outside the checkpoint data",
                record.name
            )));
        }
        if by_name.insert(record.name.clone(), record).is_some() {
            return Err(Error::data(format!("duplicate tensor {}", record.name)));
        }
    }

    let mut params = Parameters::zeros(cfg)?;
    let mut used = std::collections::BTreeSet::new();
    for slot in params.tensors_mut() {
        let source = if replicate_heads && slot.name.starts_with("head.") {
            let tail = slot.name.split_once('.').map(|(_, t)| t).unwrap_or_default();
            let field = tail.split_once('.').map(|(_, f)| f).unwrap_or_default();
            format!("head.0.{field}")
        } else {
            slot.name.clone()
        };
        let record = by_name.get(source.as_str()).ok_or_else(|| {
            Error::data(format!("checkpoint is missing tensor {source}"))
        })?;
        if record.shape != slot.shape {
            return Err(Error::data(format!(
                "tensor {} has shape {:?} in the checkpoint, expected {:?}",
                source, record.shape, slot.shape
            )));
        }
        slot.data.copy_from_slice(&blob[record.offset..record.offset + record.len]);
        used.insert(source);
    }
    if let Some(stray) = by_name.keys().find(|name| !used.contains(*name)) {
        return Err(Error::data(format!("checkpoint holds unexpected tensor {stray}")));
    }
    Ok((Model { cfg: cfg.clone(), params }, manifest.filter))
}

/// Splits a checkpoint byte stream into manifest and decoded f64 blob.
fn parse(bytes: &[u8], path: &Path) -> Result<(Manifest, Vec<f64>)> {
    let bad = |why: &str| Error::data(format!("{}: {why}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16 + manifest_len;
    if bytes.len() < data_start {
        return Err(bad("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| bad(&format!("malformed manifest: {e}")))?;
    if manifest.format != String::from_utf8_lossy(MAGIC) {
        return Err(bad("manifest format tag mismatch"));
    }
    let data = &bytes[data_start..];
    if !data.len().is_multiple_of(std::mem::size_of::<f64>()) {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let blob: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((manifest, blob))
}
