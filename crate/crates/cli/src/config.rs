use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hwgan::trainer::TrainConfig;

/// Starting point for the effective config.
#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size networks.
    Full,
    /// Narrow networks for CPU runs.
    Desk,
}

/// Everything a run reads; dumped as `config.json` next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub data_root: Option<PathBuf>,
    /// Defaults to `$HWGAN_CACHE_DIR`, then `./cache`.
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self::preset(Preset::Full)
    }
}

impl CliConfig {
    pub fn preset(p: Preset) -> Self {
        Self {
            train: match p {
                Preset::Full => TrainConfig::default(),
                Preset::Desk => TrainConfig::desk(),
            },
            data_root: None,
            cache: None,
            out: None,
        }
    }

    /// The preset with `file` merged over it key by key.
    pub fn load(p: Preset, file: Option<&Path>) -> Result<Self> {
        let mut value = serde_json::to_value(Self::preset(p))?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let overlay: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut value, overlay);
        }
        let c: Self = serde_json::from_value(value).context("invalid config")?;
        c.train.validate()?;
        Ok(c)
    }
}

/// Objects merge recursively; anything else replaces.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_only_named_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train": {"lr_g": 0.01, "sampler": {"bias": 2.0}}, "out": "x"}"#).unwrap();
        let c = CliConfig::load(Preset::Desk, Some(&path)).unwrap();
        assert_eq!(c.train.lr_g, 0.01);
        assert_eq!(c.train.lr_d, 0.001);
        assert_eq!(c.train.sampler.bias, 2.0);
        assert_eq!(c.train.sampler.max_points, TrainConfig::desk().sampler.max_points);
        assert_eq!(c.train.discriminator, TrainConfig::desk().discriminator);
        assert_eq!(c.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn invalid_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train": {"decay_factor": 2.0}}"#).unwrap();
        assert!(CliConfig::load(Preset::Full, Some(&path)).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let c = CliConfig::preset(Preset::Desk);
        let back: CliConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
