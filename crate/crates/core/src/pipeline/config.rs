use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keyframe::KeyframeThresholds;
use crate::tracker::TrackerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StereoConfig {
    /// SAD window side, odd.
    pub window: usize,
    pub max_disparity: usize,
}

impl Default for StereoConfig {
    fn default() -> Self {
        StereoConfig {
            window: 7,
            max_disparity: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// A frame whose estimate lands further than this many keyframe
    /// translation thresholds from the motion prior counts as not tracked.
    pub max_step_thresholds: f64,
    /// Relocalization only switches keyframe when another one is nearer by
    /// more than this fraction of the translation threshold.
    pub hysteresis_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_step_thresholds: 5.0,
            hysteresis_fraction: 0.01,
        }
    }
}

/// Everything that influences a run; hashed into every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub keyframes: KeyframeThresholds,
    pub stereo: StereoConfig,
    pub run: RunConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tracker
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let k = &self.keyframes;
        if !(k.translation_m > 0.0 && k.rotation_deg > 0.0) {
            return Err(ConfigError::Invalid("keyframe thresholds must be positive".into()));
        }
        if self.stereo.window < 3 || self.stereo.window.is_multiple_of(2) {
            return Err(ConfigError::Invalid("stereo window must be odd and at least 3".into()));
        }
        if !(self.run.max_step_thresholds > 0.0) || !(self.run.hysteresis_fraction >= 0.0) {
            return Err(ConfigError::Invalid("run limits must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}
