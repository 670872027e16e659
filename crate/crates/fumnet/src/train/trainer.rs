//! Episodic meta-training: one optimizer step per sampled episode, with
//! periodic validation, plateau-driven learning rate decay, and
//! best-on-validation checkpointing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::adam::Adam;
use super::checkpoint::{save_checkpoint, CheckpointError};
use super::eval::{evaluate, EvalReport};
use super::metrics::{MetricsError, MetricsRecord, MetricsWriter};
use super::plateau::PlateauSchedule;
use crate::episode::{sample_episode, DataError, Dataset, Episode};
use crate::model::{episode_batch, FumModel, ModelError};
use crate::nn::Mode;
use crate::rng;
use crate::tensor::{backward, Tape, Tensor, TensorError};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainSettings {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,
    /// Episode budget: 60,000 at CUB scale, 120,000 at miniImagenet
    /// scale; desk-scale runs use far less.
    pub episodes: usize,
    pub eval_interval: usize,
    /// Validation episodes per periodic evaluation (the final test uses
    /// 600; during training a shorter eval keeps runtime sane).
    pub val_episodes: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Optional early exit once a validation evaluation reaches this
    /// accuracy; the budget above still bounds the run.
    pub stop_at_val_accuracy: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            query_size: 16,
            episodes: 60_000,
            eval_interval: 500,
            val_episodes: 100,
            learning_rate: 0.001,
            seed: 0,
            stop_at_val_accuracy: None,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub episodes_run: usize,
    pub best_val_accuracy: f64,
    pub best_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub final_learning_rate: f32,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training produced no validation evaluation (budget {0} < eval interval)")]
    NoEvaluation(usize),
}

/// One episode: forward over support and queries, mean query loss,
/// backprop, Adam update, and batch-norm running-statistic updates.
/// Returns the episode's loss.
pub fn train_step(
    model: &mut FumModel<f32>,
    episode: &Episode,
    adam: &mut Adam,
) -> Result<f32, TrainError> {
    let (batch, labels) = episode_batch::<f32>(episode, &model.norm)?;
    let tape = Tape::new();
    let mut updates = Vec::new();
    let (loss_value, grads) = {
        let frame = model.store.lease(&tape);
        let images = tape.input(&batch, false);
        let scores = model.episode_scores(
            &frame,
            images,
            episode.n_way,
            episode.k_shot,
            labels.len(),
            Mode::Train,
            &mut updates,
        )?;
        let loss = crate::nn::mean_cross_entropy(scores, &labels)?;
        backward(loss)?;
        let grads: Vec<Option<Tensor<f32>>> =
            model.store.trainable_ids().map(|id| frame.grad(id)).collect();
        (loss.value().data()[0], grads)
    };
    adam.step(&mut model.store, &grads);
    model.store.apply_updates(updates);
    Ok(loss_value)
}

/// Runs the full meta-training loop and returns the best-on-validation
/// outcome. `out_dir` receives `metrics.jsonl` and `best.ckpt`.
pub fn meta_train(
    model: &mut FumModel<f32>,
    settings: &TrainSettings,
    train_set: &Dataset,
    val_set: &Dataset,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    let mut adam = Adam::new(&model.store, settings.learning_rate);
    let mut schedule = PlateauSchedule::new(settings.learning_rate);
    let metrics_path = out_dir.join("metrics.jsonl");
    let best_path = out_dir.join("best.ckpt");
    let mut metrics = MetricsWriter::create(&metrics_path)?;

    let started = Instant::now();
    let mut best_val = f64::NEG_INFINITY;
    let mut interval_loss = 0.0f64;
    let mut interval_count = 0usize;
    let mut evaluated = false;
    let mut episodes_run = 0usize;

    for episode_index in 1..=settings.episodes {
        let mut sampler = rng::substream(settings.seed, "sampler", episode_index as u64);
        let episode = sample_episode(
            train_set,
            settings.n_way,
            settings.k_shot,
            settings.query_size,
            &mut sampler,
        )?;
        let loss = train_step(model, &episode, &mut adam)?;
        interval_loss += loss as f64;
        interval_count += 1;
        episodes_run = episode_index;

        let at_interval = episode_index % settings.eval_interval == 0;
        let last = episode_index == settings.episodes;
        if !(at_interval || last) {
            continue;
        }

        // The validation episode set is fixed across evaluations so the
        // plateau signal compares like with like.
        let report = evaluate(
            model,
            val_set,
            settings.n_way,
            settings.k_shot,
            settings.query_size,
            settings.val_episodes,
            rng::derive_seed(settings.seed, "val-episodes", 0),
        )?;
        evaluated = true;
        if report.mean_accuracy > best_val {
            best_val = report.mean_accuracy;
            save_checkpoint(&best_path, model)?;
        }
        if let Some(new_lr) = schedule.update(report.mean_accuracy as f32) {
            adam.learning_rate = new_lr;
            log::info!("episode {episode_index}: learning rate reduced to {new_lr}");
        }
        metrics.write(&MetricsRecord {
            episode_index,
            train_loss: interval_loss / interval_count.max(1) as f64,
            eval_accuracy: report.mean_accuracy,
            ci95: report.ci95_halfwidth,
            learning_rate: adam.learning_rate,
            wall_time_ms: started.elapsed().as_millis() as u64,
        })?;
        interval_loss = 0.0;
        interval_count = 0;

        if settings
            .stop_at_val_accuracy
            .is_some_and(|target| report.mean_accuracy >= target)
        {
            log::info!("episode {episode_index}: validation target reached, stopping");
            break;
        }
    }
    if !evaluated {
        return Err(TrainError::NoEvaluation(settings.episodes));
    }
    Ok(TrainOutcome {
        episodes_run,
        best_val_accuracy: best_val,
        best_checkpoint: best_path,
        metrics_path,
        final_learning_rate: adam.learning_rate,
    })
}

/// Final 600-episode test protocol for a trained model.
pub fn test_protocol(
    model: &FumModel<f32>,
    test_set: &Dataset,
    settings: &TrainSettings,
    episodes: usize,
) -> Result<EvalReport, TrainError> {
    Ok(evaluate(
        model,
        test_set,
        settings.n_way,
        settings.k_shot,
        settings.query_size,
        episodes,
        rng::derive_seed(settings.seed, "test-episodes", 0),
    )?)
}
