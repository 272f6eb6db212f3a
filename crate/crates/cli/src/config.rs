use std::path::{Path, PathBuf};

use dft_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// What a training run writes besides the checkpoint, loss history and
/// report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exports {
    /// `embeddings_source.csv` and `embeddings_target.csv`.
    pub embeddings: bool,
    /// `predictions_target.csv`.
    pub predictions: bool,
}

impl Default for Exports {
    fn default() -> Self {
        Exports {
            embeddings: true,
            predictions: true,
        }
    }
}

/// A training run. Relative paths are taken relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Score the trained model against target labels, when the target
    /// dataset has them. They are loaded only after training finishes.
    #[serde(default = "yes")]
    pub evaluate_target: bool,
    #[serde(default)]
    pub exports: Exports,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for p in [&mut cfg.source, &mut cfg.target, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(r#"{"source": "s", "target": "/abs/t"}"#, Path::new("/base")).unwrap();
        assert_eq!(cfg.source, PathBuf::from("/base/s"));
        assert_eq!(cfg.target, PathBuf::from("/abs/t"));
        assert_eq!(cfg.train, TrainConfig::default());
        assert!(cfg.evaluate_target && cfg.exports.embeddings);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"source": "s", "target": "t", "epochs": 3}"#,
            r#"{"source": "s", "target": "t", "train": {"epoch": 3}}"#,
            r#"{"source": "s", "target": "t", "exports": {"plots": true}}"#,
        ] {
            assert!(RunConfig::parse(text, Path::new(".")).is_err(), "{text}");
        }
    }
}
