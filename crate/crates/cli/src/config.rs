//! The `--config` file: one optional TOML section per stage.

use std::path::Path;

use serde::Deserialize;
use synesthete::estimators::TrainingConfig;
use synesthete::pipeline::StoryConfig;
use synesthete::translator::TranslatorConfig;
use synesthete::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    pub num_classes: Option<usize>,
    pub latent_dim: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub synthetic: Synthetic,
    pub train_audio: Option<TrainingConfig>,
    pub translator: Option<TranslatorConfig>,
    pub story: Option<StoryConfig>,
}

impl CliConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(t) = &cfg.train_audio {
            t.validate().map_err(as_config)?;
        }
        if let Some(t) = &cfg.translator {
            t.validate().map_err(as_config)?;
        }
        if let Some(s) = &cfg.story {
            s.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let cfg = CliConfig::from_toml_str("").unwrap();
        assert!(cfg.story.is_none() && cfg.synthetic.num_classes.is_none());
    }

    #[test]
    fn story_section_parses_nested_features() {
        let cfg = CliConfig::from_toml_str(
            "[story]\ninterval_seconds = 2.5\naggregation = \"median\"\n[story.features]\nwindow_ms = 500\n",
        )
        .unwrap();
        let story = cfg.story.unwrap();
        assert_eq!(story.windows_per_interval().unwrap(), 5);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in ["[synthetic]\nclasses = 3\n", "[storyy]\n", "[translator]\nepochz = 1\n"] {
            assert!(matches!(CliConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = CliConfig::from_toml_str("[story]\ninterval_seconds = 0.7\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = CliConfig::from_toml_str("[train_audio]\nbatch_size = 0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
