//! Project configuration file (TOML). Unknown keys are rejected; omitted
//! sections take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::DEFAULT_IMAGE_SIZE;
use crate::training::{LossWeights, ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Scene bundle directory.
    pub scene: PathBuf,
    /// Directory receiving checkpoints, metrics and renders.
    pub output: PathBuf,
    #[serde(default = "default_image_size")]
    pub image_size: [usize; 2],
    #[serde(default)]
    pub background: [f64; 3],
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_image_size() -> [usize; 2] {
    [DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE]
}

impl ProjectConfig {
    pub fn new(scene: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        ProjectConfig {
            scene: scene.into(),
            output: output.into(),
            image_size: default_image_size(),
            background: [0.0; 3],
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            model: ModelConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ProjectConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative paths are taken relative to the config file.
        if let Some(dir) = path.parent() {
            if cfg.scene.is_relative() {
                cfg.scene = dir.join(&cfg.scene);
            }
            if cfg.output.is_relative() {
                cfg.output = dir.join(&cfg.output);
            }
        }
        Ok(cfg)
    }

    /// Normalized text form.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the normalized text form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size.iter().any(|s| *s < 16) {
            return Err(Error::Config(format!("image_size must be at least 16x16, got {:?}", self.image_size)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config(format!("background must lie in [0,1], got {:?}", self.background)));
        }
        self.train.validate()?;
        self.loss.validate()?;
        self.model.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ProjectConfig::parse("scene = \"s\"\noutput = \"o\"\n").unwrap();
        assert_eq!(cfg, ProjectConfig::new("s", "o"));
    }

    #[test]
    fn round_trip_is_stable() {
        let mut cfg = ProjectConfig::new("scene", "out");
        cfg.train.stage1_iters = 17;
        cfg.loss.lambda_xyz = 0.5;
        let text = cfg.to_toml();
        let back = ProjectConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ProjectConfig::parse("scene = \"s\"\noutput = \"o\"\nfoo = 1\n").is_err());
        assert!(ProjectConfig::parse("scene = \"s\"\noutput = \"o\"\n[train]\nlr = 1.0\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ProjectConfig::parse("scene = \"s\"\noutput = \"o\"\n[loss]\nlambda_l1 = 1.5\n").is_err());
        assert!(ProjectConfig::parse("scene = \"s\"\noutput = \"o\"\n[train]\nlr_stage1 = 0.0\n").is_err());
        assert!(ProjectConfig::parse("scene = \"s\"\noutput = \"o\"\nimage_size = [8, 8]\n").is_err());
    }
}
