//! Subcommand implementations.

use std::path::PathBuf;

use fumnet::diag::{format_battery, run_battery, Fault};
use fumnet::episode::{
    generate_synthetic_dataset, save_dataset_as_folder, write_split_files, DataError, Split,
};
use fumnet::model::{FumModel, ModelError};
use fumnet::train::{
    apply_checkpoint, evaluate, load_checkpoint, meta_train, CheckpointError, TrainError,
};

use crate::merge::{merged_config, ConfigOverrides};

pub enum CliError {
    Usage(String),
    Data(DataError),
    Runtime(String),
    CheckFailed,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Data(err) => write!(f, "{err}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
            CliError::CheckFailed => write!(f, "one or more checks failed"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        CliError::Data(err)
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::Data(err) => CliError::Data(err),
            TrainError::Model(ModelError::Data(err)) => CliError::Data(err),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        match err {
            ModelError::Data(err) => CliError::Data(err),
            ModelError::InvalidConfig(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(err: CheckpointError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

#[derive(clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let config = merged_config(&args.overrides).map_err(CliError::Usage)?;
    let (train_set, val_set, test_set) = config.load_datasets()?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", config.out_dir.display())))?;
    let config_snapshot = toml::to_string_pretty(&config)
        .map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))?;
    std::fs::write(config.out_dir.join("run.toml"), config_snapshot)
        .map_err(|e| CliError::Runtime(format!("cannot write run.toml: {e}")))?;

    let mut model =
        FumModel::<f32>::new(config.model_config(), config.seed).map_err(CliError::from)?;
    log::info!(
        "training {} ({} parameters) for up to {} episodes",
        config.variant,
        model.num_parameters(),
        config.episodes
    );
    let settings = config.train_settings();
    let outcome = meta_train(&mut model, &settings, &train_set, &val_set, &config.out_dir)?;
    println!(
        "best validation accuracy: {:.2}% after {} episodes (checkpoint: {})",
        outcome.best_val_accuracy * 100.0,
        outcome.episodes_run,
        outcome.best_checkpoint.display()
    );
    // Held-out protocol on the saved best model, for the record.
    let best = fumnet::train::model_from_checkpoint(&outcome.best_checkpoint)?;
    let report = fumnet::train::test_protocol(&best, &test_set, &settings, config.eval_episodes)?;
    println!("test {report}");
    Ok(())
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,

    /// Episode count for the report [default: 600]
    #[arg(long)]
    eval_episodes: Option<usize>,

    /// Where to write the JSON report [default: alongside the checkpoint]
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,

    #[command(flatten)]
    overrides: ConfigOverrides,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let config = merged_config(&args.overrides).map_err(CliError::Usage)?;
    let episodes = args.eval_episodes.unwrap_or(config.eval_episodes);

    // With an explicit --config the architecture in that file wins (a
    // mismatched checkpoint is rejected); otherwise the checkpoint's
    // embedded config is used as-is.
    let model = if args.overrides.config.is_some() {
        let (_, params) = load_checkpoint(&args.checkpoint)?;
        let mut model =
            FumModel::<f32>::new(config.model_config(), config.seed).map_err(CliError::from)?;
        apply_checkpoint(&mut model, params)?;
        model
    } else {
        fumnet::train::model_from_checkpoint(&args.checkpoint)?
    };

    let (_, _, test_set) = config.load_datasets()?;
    let report = evaluate(
        &model,
        &test_set,
        model.config.n_way,
        config.k_shot,
        config.query_size,
        episodes,
        fumnet::rng::derive_seed(config.seed, "test-episodes", 0),
    )
    .map_err(CliError::from)?;
    println!("{report}");

    let report_path = args.report.unwrap_or_else(|| {
        let mut path = args.checkpoint.clone();
        path.set_extension("eval.json");
        path
    });
    let record = serde_json::json!({
        "episodes": report.episodes,
        "mean_accuracy": report.mean_accuracy,
        "ci95_halfwidth": report.ci95_halfwidth,
        "n_way": model.config.n_way,
        "k_shot": config.k_shot,
        "seed": config.seed,
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&record).expect("plain json"))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", report_path.display())))?;
    log::info!("report written to {}", report_path.display());
    Ok(())
}

#[derive(clap::Args)]
pub struct GradcheckArgs {
    /// Deliberately sabotage the implementation under test to prove the
    /// battery notices (supported: causal-padding)
    #[arg(long, value_name = "FAULT", hide = true)]
    inject_fault: Option<String>,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("causal-padding") => Some(Fault::CausalPadding),
        Some(other) => return Err(CliError::Usage(format!("unknown fault {other:?}"))),
    };
    let results = run_battery(fault);
    print!("{}", format_battery(&results));
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::CheckFailed)
    }
}

#[derive(clap::Args)]
pub struct GenSyntheticArgs {
    /// Output directory for class folders and split files
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Total classes; val and test each take floor(classes/6), the rest
    /// train [default: 30]
    #[arg(long, default_value_t = 30)]
    classes: usize,

    /// Samples per class [default: 25]
    #[arg(long, default_value_t = 25)]
    samples_per_class: usize,

    /// Gaussian noise sigma [default: 0.1]
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f32,

    /// Max circular shift in pixels [default: 4]
    #[arg(long, default_value_t = 4)]
    max_shift: usize,

    /// Generation seed [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn gen_synthetic(args: GenSyntheticArgs) -> Result<(), CliError> {
    let dataset = generate_synthetic_dataset(
        args.classes,
        args.samples_per_class,
        args.noise_sigma,
        args.max_shift,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out.display())))?;
    save_dataset_as_folder(&dataset, &args.out)?;

    let names: Vec<String> = dataset.classes().iter().map(|c| c.name.clone()).collect();
    let holdout = (args.classes / 6).max(1);
    let train_end = args.classes - 2 * holdout;
    write_split_files(
        &args.out,
        &[
            (Split::Train, names[..train_end].to_vec()),
            (Split::Val, names[train_end..train_end + holdout].to_vec()),
            (Split::Test, names[train_end + holdout..].to_vec()),
        ],
    )?;
    println!(
        "wrote {} classes x {} samples to {} (splits: {} train / {} val / {} test)",
        args.classes,
        args.samples_per_class,
        args.out.display(),
        train_end,
        holdout,
        holdout
    );
    Ok(())
}
