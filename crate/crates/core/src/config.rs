//! Run configuration: one TOML document whose keys may be written as dotted
//! `section.key = value` lines. Unknown keys are rejected with their full path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::EncoderConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::learner::LearnerConfig;
use crate::reward::RewardConfig;

/// Environment variable that overrides `run.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "COGPOLICY_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub encoder: EncoderConfig,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub learner: LearnerConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses and validates. `source` names the input in error messages.
    pub fn from_toml_str(text: &str, source: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config(source, e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.env.validate()?;
        self.reward.validate()?;
        self.learner.validate()?;
        self.eval.validate()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.run.output_dir.clone(),
        }
    }

    /// Network layer dims implied by the encoder and learner sections.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.learner.layer_dims(self.encoder.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_defaults() {
        let text = "run.seed = 7\nencoder.dim = 32\nlearner.total_episodes = 10\nreward.w_safe = 0.0\n";
        let cfg = RunConfig::from_toml_str(text, "inline").unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.encoder.dim, 32);
        assert_eq!(cfg.reward.w_safe, 0.0);
        assert_eq!(cfg.reward.r_gold, 1.8);
        assert_eq!(cfg.learner.gamma, 0.8);
        assert_eq!(cfg.layer_dims(), vec![32, 256, 128, 10]);
    }

    #[test]
    fn unknown_key_names_path() {
        match RunConfig::from_toml_str("reward.r_golden = 2.0\n", "inline") {
            Err(Error::Config { path, reason }) => {
                assert_eq!(path, "reward.r_golden");
                assert!(reason.contains("unknown field"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_value_names_path() {
        match RunConfig::from_toml_str("learner.gamma = 1.5\n", "inline") {
            Err(Error::Config { path, .. }) => assert_eq!(path, "learner.gamma"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml_str("encoder.dim = 3\n", "inline") {
            Err(Error::Config { path, .. }) => assert_eq!(path, "encoder.dim"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml_str("encoder.dim = \"wide\"\n", "inline") {
            Err(Error::Config { path, .. }) => assert_eq!(path, "encoder.dim"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string(), "inline").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let desk = RunConfig::load(&dir.join("desk.cfg")).unwrap();
        assert_eq!(desk.learner.total_episodes, 20_000);
        assert_eq!(desk.learner.actors, 8);
        assert_eq!(desk.encoder.dim, 64);
        let full = RunConfig::load(&dir.join("paper.cfg")).unwrap();
        assert_eq!(full.learner.total_episodes, 100_000);
        assert_eq!(full.learner.actors, 32);
        assert_eq!(full.encoder.dim, 1024);
        assert_eq!(full.learner.replay_capacity, 100_000);
    }
}
