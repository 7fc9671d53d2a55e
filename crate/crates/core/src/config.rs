//! TOML run configuration: model preset, optimizer, sampling, preprocessing
//! constants, synthetic-data specs, and the evaluation protocol.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::checkpoint::FilterSettings;
use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::evaluation::ProtocolEntry;
use crate::synth::SynthSpec;
use crate::training::{DataConfig, OptimizerConfig};

/// Architecture selection: a named preset plus targeted overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// One of `desk`, `full_size`, `tiny`.
    pub preset: String,
    /// Overrides the preset's head count (must stay odd).
    pub heads: Option<usize>,
    /// Overrides the preset's initialization seed.
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { preset: "desk".into(), heads: None, seed: None }
    }
}

impl ModelSection {
    /// Materializes the architecture the section describes.
    ///
    /// # Errors
    /// Fails on an unknown preset name or an invalid resulting architecture.
    pub fn build(&self) -> Result<ModelConfig> {
        let mut cfg = match self.preset.as_str() {
            "desk" => ModelConfig::desk(),
            "full_size" => ModelConfig::full_size(),
            "tiny" => ModelConfig::tiny(),
            other => {
                return Err(Error::config(format!(
                    "unknown model preset `{other}`; expected desk, full_size, or tiny"
                )))
            }
        };
        if let Some(h) = self.heads {
            cfg.h = h;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a run reads from its configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    /// Architecture section.
    pub model: ModelSection,
    /// Optimizer and schedule section.
    pub optim: OptimizerConfig,
    /// Window-sampling section.
    pub data: DataConfig,
    /// Preprocessing constants section.
    pub filter: FilterSettings,
    /// Synthetic dataset specs consumed by the `synth` command.
    pub synth: Vec<SynthSpec>,
    /// Rolling-window entries consumed by the `evaluate` command.
    pub protocol: Vec<ProtocolEntry>,
}

impl AppConfig {
    /// Parses and validates a TOML configuration file.
    ///
    /// # Errors
    /// Fails on unreadable files, unknown keys (named in the message), type
    /// mismatches, or out-of-range values.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: AppConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-checks the sections without touching the filesystem.
    ///
    /// # Errors
    /// Fails when any section carries out-of-range values.
    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.optim.validate()?;
        self.data.validate()?;
        if !(self.filter.r > 0.0 && self.filter.r.is_finite()) {
            return Err(Error::config(format!(
                "filter.r must be positive, got {}",
                self.filter.r
            )));
        }
        if !(self.filter.eps > 0.0 && self.filter.eps.is_finite()) {
            return Err(Error::config(format!(
                "filter.eps must be positive, got {}",
                self.filter.eps
            )));
        }
        if self.filter.pixel_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("filter.pixel_std entries must be positive"));
        }
        Ok(())
    }
}
