use std::fs;
use std::path::{Path, PathBuf};

use p4dfd_core::data::AugmentConfig;
use p4dfd_core::model::ModelConfig;
use p4dfd_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::RunArgs;
use crate::error::{CliError, CliResult};

/// Everything `train` and `ablate` need. Every field may be omitted from the
/// JSON file; missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Apply `augment` while training.
    pub augmentation: bool,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Held-out share of `data` for `ablate` when `test_data` is unset.
    pub test_fraction: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            augmentation: true,
            data: None,
            test_data: None,
            test_fraction: 0.25,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, overlaid with `--config`, overlaid with the other flags.
    pub fn resolve(args: &RunArgs) -> CliResult<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(args);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, args: &RunArgs) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        if args.data.is_some() {
            self.data.clone_from(&args.data);
        }
        if args.test_data.is_some() {
            self.test_data.clone_from(&args.test_data);
        }
        if args.out.is_some() {
            self.out.clone_from(&args.out);
        }
        set(&mut self.model.variant, &args.variant);
        set(&mut self.model.input_side, &args.side);
        set(&mut self.train.stage1_epochs, &args.stage1_epochs);
        set(&mut self.train.stage2_epochs, &args.stage2_epochs);
        set(&mut self.train.batch_size, &args.batch_size);
        set(&mut self.train.lr_new, &args.lr_new);
        set(&mut self.train.lr_backbone, &args.lr_backbone);
        set(&mut self.train.seed, &args.seed);
        if args.no_augment {
            self.augmentation = false;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |e: p4dfd_core::Error| CliError::Config(e.to_string());
        self.model.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        self.augment.validate().map_err(bad)?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    pub fn augmentation(&self) -> Option<&AugmentConfig> {
        self.augmentation.then_some(&self.augment)
    }

    pub fn require_data(&self) -> CliResult<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("no training data: pass --data or set \"data\"".into()))
    }

    pub fn require_out(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("no output directory: pass --out or set \"out\"".into()))
    }
}
