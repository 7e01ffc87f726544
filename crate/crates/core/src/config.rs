//! One TOML document configuring every command.
//!
//! ```toml
//! [data]
//! train_normal = 256
//! seed = 7
//!
//! [train]
//! epochs = 15
//! dataset = "data"
//! checkpoint = "run/model.ckpt"
//!
//! [train.loss]
//! use_latent = true
//!
//! [score]
//! variant = "encoded"
//!
//! [localize]
//! quantile = 0.995
//! ```
//!
//! Missing keys take their defaults; unknown keys are errors. Command-line
//! flags are applied on top with [`RunConfig::apply`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSpec;
use crate::error::{Error, Result};
use crate::inference::{LocalizeConfig, ScoreConfig, ScoreVariant};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    pub localize: LocalizeConfig,
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Sets both the dataset seed and the training seed.
    pub seed: Option<u64>,
    pub variant: Option<ScoreVariant>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// File (or defaults when `path` is `None`), then flags.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.data.seed = seed;
            self.train.seed = seed;
        }
        if let Some(v) = o.variant {
            self.score.variant = v;
        }
        if let Some(d) = &o.dataset {
            self.train.dataset = d.clone();
        }
        if let Some(c) = &o.checkpoint {
            self.train.checkpoint = c.clone();
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.score.validate()?;
        self.localize.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nepoch = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[extra]\n").is_err());
        assert!(RunConfig::from_toml_str("[train.loss]\nuse_pixels = true\n").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[train]\nepochs = 3\nseed = 4\n[score]\nvariant = \"l1\"\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed, cfg.score.variant), (3, 4, ScoreVariant::L1));
        assert_eq!(cfg.train.batch_size, 24);
        let o = Overrides {
            seed: Some(9),
            variant: Some(ScoreVariant::Bottleneck),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &o).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed, cfg.data.seed), (3, 9, 9));
        assert_eq!(cfg.score.variant, ScoreVariant::Bottleneck);
    }

    #[test]
    fn serialized_config_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.train.discriminator_seed = Some(3);
        cfg.localize.min_area = 7;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let cfg = RunConfig::from_toml_str("[train]\nbatch_size = 0\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml_str("[data]\ntrain_normal = 0\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
