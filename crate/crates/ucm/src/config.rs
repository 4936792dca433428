//! Run configuration: one JSON document with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use ucm_core::curation::DatasetConfig;
use ucm_core::diffusion::sample::SampleConfig;
use ucm_core::diffusion::train::TrainConfig;
use ucm_core::diffusion::ModelConfig;

use crate::formats::{read_to_string, IoError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("override `{0}` is not of the form KEY=VALUE")]
    Override(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {source}")]
    Value { key: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Clips rolled out along the forward half of the cycle trajectory.
    pub cycle_clips: usize,
    /// Scene and clip used by the protocols.
    pub scene: usize,
    pub clip: usize,
    /// Clips concatenated into the long memory-initialization sequence.
    pub init_clips: usize,
    /// Fraction of the camera loop covered by the forward half of the cycle.
    pub arc: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cycle_clips: 1,
            scene: 0,
            clip: 0,
            init_clips: 2,
            arc: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub frames: usize,
    pub memories: usize,
    /// Tokens per side of each frame's grid.
    pub grid: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            frames: 4,
            memories: 20,
            grid: 8,
            heads: 8,
            head_dim: 16,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Checkpoint to read; defaults to `<out>/model.ucmc`.
    pub checkpoint: Option<PathBuf>,
    pub curation: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SampleConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: PathBuf::from("data"),
            out: PathBuf::from("out"),
            checkpoint: None,
            curation: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SampleConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ucmc"))
    }

    /// Applies `KEY=VALUE` overrides, where `KEY` is a dotted path to an
    /// existing field and `VALUE` is JSON (bare words are taken as strings).
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.to_string()))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            }
            *slot = value;
            // Re-check after each override so errors name the offending key.
            serde_json::from_value::<RunConfig>(doc.clone()).map_err(|source| ConfigError::Value {
                key: key.to_string(),
                source,
            })?;
        }
        serde_json::from_value(doc).map_err(|source| ConfigError::Value {
            key: String::new(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let c = &self.curation;
        if c.width != self.model.width as u32 || c.height != self.model.height as u32 || c.frames != self.model.frames {
            return Err(ConfigError::Invalid(
                "curation frame size and count must match the model".to_string(),
            ));
        }
        if self.train.batch == 0 {
            return Err(ConfigError::Invalid("train.batch must be at least 1".to_string()));
        }
        if self.sampler.steps == 0 {
            return Err(ConfigError::Invalid("sampler.steps must be at least 1".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_set_nested_fields() {
        let c = RunConfig::default()
            .apply_overrides(&["seed=7", "model.depth=2", "dataset=/tmp/x", "sampler.frustum.samples=512"])
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.depth, 2);
        assert_eq!(c.dataset, PathBuf::from("/tmp/x"));
        assert_eq!(c.sampler.frustum.samples, 512);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let c = RunConfig::default();
        assert!(matches!(c.apply_overrides(&["model.nope=1"]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.apply_overrides(&["seed"]), Err(ConfigError::Override(_))));
        assert!(matches!(c.apply_overrides(&["seed=abc"]), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }
}
