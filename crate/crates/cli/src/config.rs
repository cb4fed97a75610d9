//! Flat TOML run configuration for `weightscope train`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weightscope::nn::{InitKind, InitScheme, NetworkSpec, TrainConfig};

use crate::CliError;

/// Every key of a run config. Unknown keys are rejected.
///
/// ```toml
/// layer_sizes = [784, 100, 10]
/// init = "normal"
/// init_sigma = 1e-6
/// train_images = "mnist/train-images-idx3-ubyte"
/// train_labels = "mnist/train-labels-idx1-ubyte"
/// test_images = "mnist/t10k-images-idx3-ubyte"
/// test_labels = "mnist/t10k-labels-idx1-ubyte"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub layer_sizes: Vec<usize>,
    pub init: InitKind,
    #[serde(default)]
    pub init_mu: f64,
    #[serde(default = "default_sigma")]
    pub init_sigma: f64,
    #[serde(default)]
    pub jitter_sigma: f64,

    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub subset_size: Option<usize>,
    #[serde(default)]
    pub test_subset_size: Option<usize>,
    #[serde(default = "yes")]
    pub shuffle: bool,
    #[serde(default = "yes")]
    pub record_initial: bool,
    /// Weight matrices to record; all of them when absent.
    #[serde(default)]
    pub record_layers: Option<Vec<usize>>,

    /// Relative paths are resolved against the config file's directory.
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Used when `--out` is not given.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_sigma() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

mod defaults {
    use weightscope::nn::TrainConfig;

    pub fn learning_rate() -> f64 {
        TrainConfig::default().learning_rate
    }
    pub fn batch_size() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn epochs() -> usize {
        TrainConfig::default().epochs
    }
    pub fn snapshot_every() -> usize {
        TrainConfig::default().snapshot_every
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {}", e.message())))
    }

    /// Reads a config and makes its dataset and output paths absolute.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        for p in [
            &mut cfg.train_images,
            &mut cfg.train_labels,
            &mut cfg.test_images,
            &mut cfg.test_labels,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = cfg.out_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, CliError> {
        NetworkSpec::new(self.layer_sizes.clone()).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn init_scheme(&self) -> Result<InitScheme, CliError> {
        let scheme = match self.init {
            InitKind::Zero => InitScheme::zero(),
            InitKind::Normal => InitScheme::normal(self.init_mu, self.init_sigma),
        }
        .with_jitter(self.jitter_sigma);
        scheme.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(scheme)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            snapshot_every: self.snapshot_every,
            seed: self.seed,
            subset_size: self.subset_size,
            test_subset_size: self.test_subset_size,
            shuffle: self.shuffle,
            record_initial: self.record_initial,
            record_layers: self.record_layers.clone(),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
