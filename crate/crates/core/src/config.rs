//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::PoolSpec;
use crate::error::{Error, Result};
use crate::probe::ProbeConfig;
use crate::purity::TemperatureGrid;
use crate::strategy::StrategyKind;

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub embeddings: PathBuf,
    pub manifest: PathBuf,
    pub prompts: PathBuf,
    pub test_embeddings: PathBuf,
    pub test_manifest: PathBuf,
}

impl DataPaths {
    pub fn resolved(&self, base: &Path) -> Self {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self {
            embeddings: r(&self.embeddings),
            manifest: r(&self.manifest),
            prompts: r(&self.prompts),
            test_embeddings: r(&self.test_embeddings),
            test_manifest: r(&self.test_manifest),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    pub pool: PoolSpec,
    /// Annotations per round, C.
    pub budget: usize,
    /// Query rounds after the initial random round, R.
    pub rounds: usize,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub tau_grid: TemperatureGrid,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        self.pool.validate()?;
        self.probe.validate()?;
        self.tau_grid.validate()
    }

    /// Parse, reporting the JSON key path of the first offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file and resolve its data paths relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.data = cfg.data.resolved(base);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
