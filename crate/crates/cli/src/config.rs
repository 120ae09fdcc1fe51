//! The combined run configuration and its command-line overrides.

use std::path::Path;

use flowcast::dataflow::SplitRatios;
use flowcast::models::{Architecture, ModelConfig};
use flowcast::training::{SweepSpec, TrainConfig};
use flowcast::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs besides its input files. Every section is
/// optional in the TOML file and defaults to the tuned configuration.
///
/// ```toml
/// [split]
/// train = 0.7
/// validation = 0.1
/// test = 0.2
///
/// [model]
/// architecture = "res-transformer"
/// window = 12
///
/// [train]
/// epochs = 100
/// batch_size = 4
///
/// [sweep]
/// d = [8, 12, 16]
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub split: SplitRatios,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sweep.validate()
    }
}

/// Flags that override fields of [`RunConfig`].
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Architecture: res-transformer, a-e, bpnn, cnn1d, cnn2d, lstm,
    /// convlstm, stresnet or transformer.
    #[arg(long)]
    pub model: Option<Architecture>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Window length L.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Per-head width d.
    #[arg(long)]
    pub dmodel: Option<usize>,
    /// Encoder layers N.
    #[arg(long)]
    pub layers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(a) = self.model {
            cfg.model.architecture = a;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.window {
            cfg.model.window = v;
        }
        if let Some(v) = self.heads {
            cfg.model.heads = v;
        }
        if let Some(v) = self.dmodel {
            cfg.model.d_model = v;
        }
        if let Some(v) = self.layers {
            cfg.model.layers = v;
        }
    }
}

/// Loads `path` (or the defaults), applies overrides and the seed, and
/// validates the result.
pub fn resolve(path: Option<&Path>, overrides: &Overrides, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}
