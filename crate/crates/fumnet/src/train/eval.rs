//! Frozen-model evaluation over independently sampled episodes.

use rayon::prelude::*;

use crate::episode::{sample_episode, Dataset};
use crate::model::{episode_batch, FumModel, ModelError};
use crate::nn::Mode;
use crate::rng;
use crate::tensor::Tape;

/// Accuracy over a batch of evaluation episodes with a normal-theory 95%
/// confidence halfwidth (`1.96·std/√episodes`).
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_accuracy: f64,
    pub ci95_halfwidth: f64,
    pub per_episode: Vec<f64>,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "accuracy: {:.2}% ± {:.2} over {} episodes",
            self.mean_accuracy * 100.0,
            self.ci95_halfwidth * 100.0,
            self.episodes
        )
    }
}

/// Evaluates `episodes` deterministic episodes (derived from `seed`) in
/// parallel. Episode `i` always sees the same task regardless of thread
/// scheduling, and the reduction runs in index order, so reports are
/// reproducible.
pub fn evaluate(
    model: &FumModel<f32>,
    dataset: &Dataset,
    n_way: usize,
    k_shot: usize,
    query_size: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, ModelError> {
    let per_episode: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|i| episode_accuracy(model, dataset, n_way, k_shot, query_size, seed, i as u64))
        .collect::<Result<_, _>>()?;
    let n = per_episode.len() as f64;
    let mean = per_episode.iter().sum::<f64>() / n;
    let var = per_episode
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    Ok(EvalReport {
        episodes,
        mean_accuracy: mean,
        ci95_halfwidth: 1.96 * var.sqrt() / n.sqrt(),
        per_episode,
    })
}

fn episode_accuracy(
    model: &FumModel<f32>,
    dataset: &Dataset,
    n_way: usize,
    k_shot: usize,
    query_size: usize,
    seed: u64,
    index: u64,
) -> Result<f64, ModelError> {
    let mut rng = rng::substream(seed, "eval", index);
    let episode = sample_episode(dataset, n_way, k_shot, query_size, &mut rng)?;
    let (batch, labels) = episode_batch::<f32>(&episode, &model.norm)?;
    let tape = Tape::new();
    let frame = model.store.lease(&tape);
    let images = tape.input(&batch, false);
    let mut updates = Vec::new();
    let scores = model.episode_scores(
        &frame,
        images,
        n_way,
        k_shot,
        labels.len(),
        Mode::Eval,
        &mut updates,
    )?;
    debug_assert!(updates.is_empty());
    let scores = scores.value();
    let n = model.config.n_way;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(row, &label)| {
            let row_scores = &scores.data()[row * n..(row + 1) * n];
            let argmax = row_scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("scores are finite"))
                .map(|(i, _)| i)
                .expect("nonempty score row");
            argmax == label
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::generate_synthetic_dataset;
    use crate::model::ModelConfig;

    fn tiny_model_and_data() -> (FumModel<f32>, Dataset) {
        let mut config = ModelConfig::tiny();
        config.n_way = 2;
        let model = FumModel::new(config, 5).unwrap();
        let data = generate_synthetic_dataset(5, 6, 0.05, 2, 17).unwrap();
        (model, data)
    }

    #[test]
    fn report_is_deterministic_and_bounded() {
        let (model, data) = tiny_model_and_data();
        let a = evaluate(&model, &data, 2, 1, 4, 6, 99).unwrap();
        let b = evaluate(&model, &data, 2, 1, 4, 6, 99).unwrap();
        assert_eq!(a.per_episode, b.per_episode);
        assert!(a.mean_accuracy >= 0.0 && a.mean_accuracy <= 1.0);
        assert_eq!(a.episodes, 6);
        // Mean equals the average of the per-episode accuracies.
        let mean = a.per_episode.iter().sum::<f64>() / a.per_episode.len() as f64;
        assert!((a.mean_accuracy - mean).abs() < 1e-12);
    }

    #[test]
    fn different_seeds_sample_different_episodes() {
        let (model, data) = tiny_model_and_data();
        let a = evaluate(&model, &data, 2, 1, 4, 8, 1).unwrap();
        let b = evaluate(&model, &data, 2, 1, 4, 8, 2).unwrap();
        assert_ne!(a.per_episode, b.per_episode);
    }
}
