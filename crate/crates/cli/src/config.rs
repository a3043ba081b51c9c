use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use tofg::graph::GraphConfig;
use tofg::metrics::MetricsConfig;
use tofg::model::{ModelConfig, TrainConfig};
use tofg::simulator::SimConfig;

/// Settings file layout. Missing sections and fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `--seed` replaces every seed in the file.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sim.validate()?;
        self.metrics.validate()?;
        Ok(())
    }
}
