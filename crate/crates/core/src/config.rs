//! Declarative configuration. Every default below is the shipped setting;
//! a TOML file overrides any subset of keys and unknown keys are rejected.
//!
//! ```toml
//! [experiment]
//! dataset = "ws1"          # ws1 | ws2
//! qos = "rt"               # rt | tp
//! data_root = "data/ws1"
//! densities = [0.1, 0.2, 0.3]
//! episodes = 5
//! test_k = 200
//! seed = 0
//! sub_block = [150, 1000]  # optional random users x services restriction
//!
//! [pipeline]
//! k = 0.5
//! t_d = 200
//! controller_mode = "fast" # fast | exact
//!
//! [pipeline.nrl1]
//! hidden_sizes = [256, 128]
//! max_epochs = 50
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetKind, QosKind};
use crate::error::{Error, Result};
use crate::fill::{DeviationMode, MfConfig};
use crate::filtering::{FilterOptions, FilterThresholds, ThresholdPolicy};
use crate::neural::MlpConfig;

/// How the held-out controller cells are predicted by the level-1 blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// One multi-output network per block predicts all held-out cells.
    #[default]
    Fast,
    /// One network per block and held-out cell.
    Exact,
}

/// Which aggregator turns the four level-1 outputs into the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    /// Level-2 network when enough common observed cells exist, else MAE-Ag.
    #[default]
    Controller,
    Nrl2Only,
    MaeAgOnly,
}

/// Source of the four level-1 values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level1 {
    #[default]
    Neural,
    /// The filled matrix values themselves, no level-1 networks.
    FillValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Threshold fraction for adaptive filtering.
    pub k: f64,
    /// Explicit thresholds; when set, `k` only labels them.
    pub fixed_thresholds: Option<FilterThresholds>,
    pub use_context: bool,
    pub min_neighbors: usize,
    pub deviation_mode: DeviationMode,
    pub mf: MfConfig,
    pub nrl1: MlpConfig,
    pub nrl2: MlpConfig,
    /// Minimum number of common observed cells for the level-2 branch.
    pub t_d: usize,
    /// Number of controller cells sampled; defaults to `t_d`.
    pub lambda_size: Option<usize>,
    pub controller_mode: ControllerMode,
    pub aggregator: Aggregator,
    pub level1: Level1,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 0.5,
            fixed_thresholds: None,
            use_context: true,
            min_neighbors: crate::filtering::MIN_NEIGHBORS,
            deviation_mode: DeviationMode::SignedMean,
            mf: MfConfig::default(),
            nrl1: MlpConfig::default(),
            nrl2: MlpConfig {
                hidden_sizes: vec![2],
                max_epochs: 1000,
                ..MlpConfig::default()
            },
            t_d: 200,
            lambda_size: None,
            controller_mode: ControllerMode::Fast,
            aggregator: Aggregator::Controller,
            level1: Level1::Neural,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.k) {
            return Err(Error::Config(format!("pipeline.k must lie in [0, 1], got {}", self.k)));
        }
        if self.t_d == 0 {
            return Err(Error::Config("pipeline.t_d must be at least 1".into()));
        }
        if self.lambda_size == Some(0) {
            return Err(Error::Config("pipeline.lambda_size must be at least 1".into()));
        }
        if self.min_neighbors == 0 {
            return Err(Error::Config("pipeline.min_neighbors must be at least 1".into()));
        }
        if self.deviation_mode == DeviationMode::MajoritySign {
            return Err(Error::Unsupported(
                "pipeline.deviation_mode = \"majority_sign\" is reserved and not implemented".into(),
            ));
        }
        self.mf.validate()?;
        self.nrl1.validate()?;
        self.nrl2.validate()?;
        Ok(())
    }

    pub fn filter_options(&self) -> FilterOptions {
        FilterOptions {
            policy: match self.fixed_thresholds {
                Some(t) => ThresholdPolicy::Fixed(t),
                None => ThresholdPolicy::Adaptive { k: self.k },
            },
            use_context: self.use_context,
            min_neighbors: self.min_neighbors,
        }
    }

    pub fn lambda_size(&self) -> usize {
        self.lambda_size.unwrap_or(self.t_d)
    }

    /// Hidden sizes for a level-1 network with `n` hidden layers: 256, 128,
    /// 64, ... halving down to at least 2.
    pub fn nrl1_hidden_for_layers(n: usize) -> Vec<usize> {
        (0..n).map(|i| (256usize >> i.min(7)).max(2)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub qos: QosKind,
    pub data_root: Option<PathBuf>,
    pub densities: Vec<f64>,
    pub episodes: usize,
    pub test_k: usize,
    pub seed: u64,
    /// Restrict to a random `[users, services]` sub-block.
    pub sub_block: Option<[usize; 2]>,
    /// Seed for choosing the sub-block, independent of `seed` so that runs
    /// with different seeds share one sub-block.
    pub sub_block_seed: u64,
    /// Number of worker threads; 0 uses every core.
    pub threads: usize,
    /// WS-DREAM-2 slices to evaluate; empty means all of them.
    pub slices: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Ws1,
            qos: QosKind::Rt,
            data_root: None,
            densities: vec![0.10, 0.20, 0.30],
            episodes: 5,
            test_k: 200,
            seed: 0,
            sub_block: None,
            sub_block_seed: 0,
            threads: 0,
            slices: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densities.is_empty() {
            return Err(Error::Config("experiment.densities is empty".into()));
        }
        if let Some(d) = self.densities.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(Error::Config(format!("experiment.densities: {d} is outside (0, 1)")));
        }
        if self.episodes == 0 || self.test_k == 0 {
            return Err(Error::Config("experiment.episodes and experiment.test_k must be positive".into()));
        }
        if let Some([u, s]) = self.sub_block {
            if u == 0 || s == 0 {
                return Err(Error::Config("experiment.sub_block sides must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub experiment: ExperimentConfig,
    pub pipeline: PipelineConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.pipeline.validate()
    }
}
