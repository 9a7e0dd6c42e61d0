//! The TOML config file (schema + model widths + training hyperparameters)
//! and the on-disk dataset directory layout.
//!
//! A dataset directory holds `annotations.txt` (CelebA layout), `images/`
//! and optionally `split.txt` (CelebA partition layout) and `config.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HisdError, Result};
use crate::hierarchy::{ingest, AnnotationTable, Dataset, Split, TagConfig, TagSchema};
use crate::net::ModelConfig;
use crate::training::TrainConfig;

pub const ANNOTATIONS_FILE: &str = "annotations.txt";
pub const IMAGES_DIR: &str = "images";
pub const SPLIT_FILE: &str = "split.txt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HisdConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub tags: Vec<TagConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl HisdConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: HisdConfig = toml::from_str(text)?;
        cfg.schema()?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn schema(&self) -> Result<TagSchema> {
        TagSchema::from_config(&self.tags, self.labels.as_deref())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HisdError::Config(e.to_string()))
    }
}

/// Ingests `dir/annotations.txt` against `schema`, with images under
/// `dir/images`.
pub fn load_dataset(dir: &Path, schema: &TagSchema) -> Result<Dataset> {
    let table = AnnotationTable::read(&dir.join(ANNOTATIONS_FILE))?;
    ingest(&table, schema, &dir.join(IMAGES_DIR))
}

/// `dir/split.txt` when present, otherwise the last `test_count` records.
pub fn dataset_split(dataset: &Dataset, dir: &Path, test_count: usize) -> Result<Split> {
    let split_file = dir.join(SPLIT_FILE);
    if split_file.exists() {
        dataset.split_from_file(&std::fs::read_to_string(split_file)?)
    } else {
        dataset.split_tail(test_count.min(dataset.len()))
    }
}

pub fn config_path(dir: &Path) -> PathBuf {
    dir.join(CONFIG_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses_with_overrides() {
        let cfg = HisdConfig::parse(
            r#"
[[tags]]
name = "Bangs"
conditions = ["Male"]
attributes = [{ name = "with", when = ["Bangs=1"] }, { name = "without", when = ["Bangs=-1"] }]

[model]
image_size = 32
base_width = 16

[train]
iterations = 20000
"#,
        )
        .unwrap();
        assert_eq!(cfg.model.image_size, 32);
        assert_eq!(cfg.model.style_dim, 256);
        assert_eq!(cfg.train.iterations, 20_000);
        assert_eq!(cfg.train.batch, 8);
        let again = HisdConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = HisdConfig::parse(
            r#"
[[tags]]
name = "Bangs"
attributes = [{ name = "with", when = ["Bangs=1"] }, { name = "without", when = ["Bangs=-1"] }]
[train]
iterationz = 3
"#,
        );
        assert!(err.is_err());
    }
}
