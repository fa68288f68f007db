//! Run configuration: one JSON document that fully determines a run.
//!
//! Unknown keys are rejected, flags override file values, and the resolved
//! config is serialized into every run directory so any output can be
//! reproduced from the archive alongside it.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use step_core::data::SyntheticSpec;
use step_core::forecaster::train::ForecasterSettings;
use step_core::forecaster::TrainSchedule;
use step_core::graph::GraphLearnerSettings;
use step_core::tsformer::{PretrainSettings, TSFormerConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSource {
    /// Container file (.stsf) or CSV import (.csv).
    Path {
        path: String,
        #[serde(default = "default_steps_per_day")]
        steps_per_day: usize,
    },
    Synthetic(SyntheticSpec),
}

fn default_steps_per_day() -> usize {
    288
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub tsformer: TSFormerConfig,
    #[serde(default)]
    pub pretrain: PretrainSettings,
    #[serde(default)]
    pub graph: GraphLearnerSettings,
    #[serde(default)]
    pub forecaster: ForecasterSettings,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
}

fn default_out() -> String {
    "runs".to_string()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.split;
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            bail!("split fractions must sum to 1");
        }
        self.tsformer
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        step_core::checkpoint::hash_json(&self.to_json())
    }
}

/// Create the run directory `<out>/<8-hex config hash>-<unix seconds>[-n]`
/// and archive the resolved config inside it.
pub fn create_run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let prefix = &cfg.hash()[..8];
    let base = PathBuf::from(&cfg.out);
    fs::create_dir_all(&base)?;
    let mut dir = base.join(format!("{prefix}-{command}-{stamp}"));
    let mut n = 0;
    while dir.exists() {
        n += 1;
        dir = base.join(format!("{prefix}-{command}-{stamp}-{n}"));
    }
    fs::create_dir_all(&dir)?;
    let echo = serde_json::to_string_pretty(&cfg.to_json())?;
    fs::write(dir.join("run_config.json"), echo + "\n")?;
    Ok(dir)
}
