//! Run configuration: one flat key-value structure covering dataset
//! source, episode layout, architecture, and training schedule. The CLI
//! layers command-line flags over an optional TOML file over these
//! defaults.

use std::path::{Path, PathBuf};

use crate::episode::{load_folder_dataset, synthetic_splits, DataError, Dataset, Split, SyntheticSpec};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainSettings;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Deterministic generated benchmark.
    Synthetic,
    /// `root/<class>/<images>` plus `train.txt` / `val.txt` / `test.txt`.
    Folder,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // dataset
    pub dataset: DatasetSource,
    pub data_root: Option<PathBuf>,
    pub split_dir: Option<PathBuf>,
    pub train_classes: usize,
    pub val_classes: usize,
    pub test_classes: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f32,
    pub max_shift: usize,

    // episodes
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,

    // architecture
    pub variant: Variant,
    pub k: usize,
    pub c: usize,
    pub d: usize,
    pub filter_sizes: Vec<usize>,
    pub h_sq: usize,
    pub h1: usize,
    pub h2: usize,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,

    // training
    pub episodes: usize,
    pub eval_interval: usize,
    pub val_episodes: usize,
    pub eval_episodes: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub stop_at_val_accuracy: Option<f64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            dataset: DatasetSource::Synthetic,
            data_root: None,
            split_dir: None,
            train_classes: 20,
            val_classes: 5,
            test_classes: 5,
            samples_per_class: 25,
            noise_sigma: 0.1,
            max_shift: 4,
            n_way: 5,
            k_shot: 1,
            query_size: 16,
            variant: model.variant,
            k: model.k,
            c: model.c,
            d: model.d,
            filter_sizes: model.filter_sizes,
            h_sq: model.h_sq,
            h1: model.h1,
            h2: model.h2,
            rnn_hidden: model.rnn_hidden,
            rnn_layers: model.rnn_layers,
            episodes: 60_000,
            eval_interval: 500,
            val_episodes: 100,
            eval_episodes: 600,
            learning_rate: 0.001,
            seed: 0,
            stop_at_val_accuracy: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config file {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    /// Parses a TOML file over the built-in defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.query_size == 0 {
            return Err(ConfigError::Invalid("query_size must be positive".into()));
        }
        if self.episodes == 0 || self.eval_interval == 0 {
            return Err(ConfigError::Invalid(
                "episodes and eval_interval must be positive".into(),
            ));
        }
        if self.dataset == DatasetSource::Folder && (self.data_root.is_none() || self.split_dir.is_none())
        {
            return Err(ConfigError::Invalid(
                "folder datasets need data_root and split_dir".into(),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            n_way: self.n_way,
            k: self.k,
            c: self.c,
            d: self.d,
            filter_sizes: self.filter_sizes.clone(),
            h_sq: self.h_sq,
            h1: self.h1,
            h2: self.h2,
            rnn_hidden: self.rnn_hidden,
            rnn_layers: self.rnn_layers,
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            n_way: self.n_way,
            k_shot: self.k_shot,
            query_size: self.query_size,
            episodes: self.episodes,
            eval_interval: self.eval_interval,
            val_episodes: self.val_episodes,
            learning_rate: self.learning_rate,
            seed: self.seed,
            stop_at_val_accuracy: self.stop_at_val_accuracy,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            train_classes: self.train_classes,
            val_classes: self.val_classes,
            test_classes: self.test_classes,
            samples_per_class: self.samples_per_class,
            noise_sigma: self.noise_sigma,
            max_shift: self.max_shift,
            seed: self.seed,
        }
    }

    /// Materializes the train/val/test datasets this config names.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset, Dataset), DataError> {
        match self.dataset {
            DatasetSource::Synthetic => synthetic_splits(&self.synthetic_spec()),
            DatasetSource::Folder => {
                let root = self.data_root.as_deref().expect("validated");
                let splits = self.split_dir.as_deref().expect("validated");
                Ok((
                    load_folder_dataset(root, &splits.join("train.txt"), Split::Train)?,
                    load_folder_dataset(root, &splits.join("val.txt"), Split::Val)?,
                    load_folder_dataset(root, &splits.join("test.txt"), Split::Test)?,
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_values() {
        let config = RunConfig::default();
        assert_eq!(config.n_way, 5);
        assert_eq!(config.query_size, 16);
        assert_eq!(config.learning_rate, 0.001);
        assert_eq!(config.k, 2);
        assert_eq!(config.c, 64);
        assert_eq!(config.d, 64);
        assert_eq!(config.filter_sizes, vec![16, 32]);
        assert_eq!(config.eval_episodes, 600);
        assert_eq!(config.eval_interval, 500);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn toml_overrides_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "n_way = 7\nlearning_rate = 0.01\nvariant = \"tcn\"\n").unwrap();
        let config = RunConfig::from_file(&path).unwrap();
        assert_eq!(config.n_way, 7);
        assert_eq!(config.learning_rate, 0.01);
        assert_eq!(config.variant, Variant::Tcn);
        assert_eq!(config.query_size, 16); // untouched default

        std::fs::write(&path, "not_a_key = 3\n").unwrap();
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn folder_source_requires_paths() {
        let config = RunConfig {
            dataset: DatasetSource::Folder,
            ..RunConfig::default()
        };
        assert!(config.validate().is_err());
    }
}
