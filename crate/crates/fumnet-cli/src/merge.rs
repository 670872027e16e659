//! Flag-over-file-over-defaults merging for [`RunConfig`].

use std::path::PathBuf;

use fumnet::config::{DatasetSource, RunConfig};
use fumnet::model::Variant;

/// Overrides shared by `train` and `eval`. Every field is optional so
/// unset flags leave the config-file (or default) value alone; defaults
/// are documented in the help strings.
#[derive(clap::Args, Clone, Default)]
pub struct ConfigOverrides {
    /// TOML config file applied over the built-in defaults
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Dataset source: synthetic or folder [default: synthetic]
    #[arg(long, value_name = "KIND")]
    pub dataset: Option<String>,

    /// Root directory of a folder dataset (one subdirectory per class)
    #[arg(long, value_name = "DIR")]
    pub data_root: Option<PathBuf>,

    /// Directory holding train.txt / val.txt / test.txt split files
    #[arg(long, value_name = "DIR")]
    pub split_dir: Option<PathBuf>,

    /// Synthetic: training classes [default: 20]
    #[arg(long)]
    pub train_classes: Option<usize>,

    /// Synthetic: validation classes [default: 5]
    #[arg(long)]
    pub val_classes: Option<usize>,

    /// Synthetic: test classes [default: 5]
    #[arg(long)]
    pub test_classes: Option<usize>,

    /// Synthetic: samples per class [default: 25]
    #[arg(long)]
    pub samples_per_class: Option<usize>,

    /// Synthetic: gaussian noise sigma [default: 0.1]
    #[arg(long)]
    pub noise_sigma: Option<f32>,

    /// Synthetic: max circular shift in pixels [default: 4]
    #[arg(long)]
    pub max_shift: Option<usize>,

    /// Classes per episode [default: 5]
    #[arg(long)]
    pub n_way: Option<usize>,

    /// Support samples per class [default: 1]
    #[arg(long)]
    pub k_shot: Option<usize>,

    /// Query samples per episode [default: 16]
    #[arg(long)]
    pub query_size: Option<usize>,

    /// Architecture variant: proposed, tcn, update-only, gru, lstm
    /// [default: proposed]
    #[arg(long)]
    pub variant: Option<Variant>,

    /// Causal convolution kernel size [default: 2]
    #[arg(long)]
    pub k: Option<usize>,

    /// Feature channels / sequence length [default: 64]
    #[arg(long)]
    pub c: Option<usize>,

    /// Per-channel embedding dimension [default: 64]
    #[arg(long)]
    pub d: Option<usize>,

    /// Comma-separated filter sizes, one per forget-update module
    /// [default: 16,32]
    #[arg(long, value_delimiter = ',')]
    pub filter_sizes: Option<Vec<usize>>,

    /// Squeeze network hidden size [default: 128]
    #[arg(long)]
    pub h_sq: Option<usize>,

    /// Prediction head hidden sizes [default: 256]
    #[arg(long)]
    pub h1: Option<usize>,

    /// Prediction head hidden sizes [default: 128]
    #[arg(long)]
    pub h2: Option<usize>,

    /// Recurrent variant hidden size [default: 512]
    #[arg(long)]
    pub rnn_hidden: Option<usize>,

    /// Recurrent variant layer count [default: 2]
    #[arg(long)]
    pub rnn_layers: Option<usize>,

    /// Episode budget [default: 60000]
    #[arg(long)]
    pub episodes: Option<usize>,

    /// Episodes between validation evaluations [default: 500]
    #[arg(long)]
    pub eval_interval: Option<usize>,

    /// Validation episodes per evaluation [default: 100]
    #[arg(long)]
    pub val_episodes: Option<usize>,

    /// Initial learning rate [default: 0.001]
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f32>,

    /// Root seed; all randomness derives from it [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Stop once validation accuracy reaches this value
    #[arg(long)]
    pub stop_at_val_accuracy: Option<f64>,

    /// Output directory for checkpoints, metrics, reports
    /// [default: runs/default]
    #[arg(long, alias = "out", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

pub fn merged_config(overrides: &ConfigOverrides) -> Result<RunConfig, String> {
    let mut config = match &overrides.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(kind) = &overrides.dataset {
        config.dataset = match kind.as_str() {
            "synthetic" => DatasetSource::Synthetic,
            "folder" => DatasetSource::Folder,
            other => return Err(format!("unknown dataset source {other:?}")),
        };
    }
    macro_rules! apply {
        ($($field:ident),* $(,)?) => {
            $(if let Some(value) = overrides.$field.clone() {
                config.$field = value;
            })*
        };
    }
    apply!(
        train_classes,
        val_classes,
        test_classes,
        samples_per_class,
        noise_sigma,
        max_shift,
        n_way,
        k_shot,
        query_size,
        variant,
        k,
        c,
        d,
        filter_sizes,
        h_sq,
        h1,
        h2,
        rnn_hidden,
        rnn_layers,
        episodes,
        eval_interval,
        val_episodes,
        learning_rate,
        seed,
        out_dir,
    );
    if let Some(root) = overrides.data_root.clone() {
        config.data_root = Some(root);
    }
    if let Some(dir) = overrides.split_dir.clone() {
        config.split_dir = Some(dir);
    }
    if let Some(target) = overrides.stop_at_val_accuracy {
        config.stop_at_val_accuracy = Some(target);
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}
