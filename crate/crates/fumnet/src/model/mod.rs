//! The full model: feature extractor, two stacked forget-update modules
//! over the channel vector sequence, and the prediction head — plus the
//! ablation variants that swap the sequence stage (TCN baseline,
//! update-only) or replace it with a recurrent head (GRU, LSTM).

mod features;
mod fum;
mod head;
mod recurrent;

pub use features::FeatureExtractor;
pub use fum::{blocks_per_module, ForgetUpdateBlock, ForgetUpdateModule, TcnStack, UpdateOnlyModule};
pub use head::PredictionHead;
pub use recurrent::{RecurrentHead, RnnKind};

use crate::episode::{build_channel_vector_sequence, class_level_average};
use crate::episode::{preprocess, DataError, Episode, Normalization};
use crate::nn::{BufferUpdate, Frame, Mode, ParamStore};
use crate::rng;
use crate::tensor::{stack_rows, Element, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Proposed,
    Tcn,
    UpdateOnly,
    GruHead,
    LstmHead,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Variant::Proposed),
            "tcn" => Ok(Variant::Tcn),
            "update-only" | "update_only" => Ok(Variant::UpdateOnly),
            "gru" | "gru_head" => Ok(Variant::GruHead),
            "lstm" | "lstm_head" => Ok(Variant::LstmHead),
            other => Err(format!(
                "unknown variant {other:?} (expected proposed, tcn, update-only, gru or lstm)"
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Proposed => "proposed",
            Variant::Tcn => "tcn",
            Variant::UpdateOnly => "update-only",
            Variant::GruHead => "gru",
            Variant::LstmHead => "lstm",
        };
        f.write_str(name)
    }
}

/// Architecture hyperparameters. Defaults follow the reference setup:
/// `k = 2`, `c = d = 64`, two forget-update modules with filter sizes 16
/// and 32, a 5-way head, and 512-wide 2-layer recurrent baselines.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_way: usize,
    pub k: usize,
    pub c: usize,
    pub d: usize,
    pub filter_sizes: Vec<usize>,
    pub h_sq: usize,
    pub h1: usize,
    pub h2: usize,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Proposed,
            n_way: 5,
            k: 2,
            c: 64,
            d: 64,
            filter_sizes: vec![16, 32],
            h_sq: 128,
            h1: 256,
            h2: 128,
            rnn_hidden: 512,
            rnn_layers: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ModelConfig {
    /// Down-scaled configuration used by the 64-bit gradient checks.
    pub fn tiny() -> Self {
        Self {
            variant: Variant::Proposed,
            n_way: 2,
            k: 2,
            c: 8,
            d: 4,
            filter_sizes: vec![2, 2],
            h_sq: 8,
            h1: 16,
            h2: 8,
            rnn_hidden: 8,
            rnn_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.k < 2 {
            return fail(format!("kernel size k must be >= 2, got {}", self.k));
        }
        if self.c < 2 || self.d == 0 {
            return fail(format!("need c >= 2 and d >= 1, got c={}, d={}", self.c, self.d));
        }
        if self.n_way < 2 {
            return fail(format!("n_way must be >= 2, got {}", self.n_way));
        }
        if self.filter_sizes.is_empty() || self.filter_sizes.iter().any(|&f| f == 0) {
            return fail(format!("filter_sizes must be nonempty and positive: {:?}", self.filter_sizes));
        }
        if self.h_sq == 0 || self.h1 == 0 || self.h2 == 0 {
            return fail("hidden sizes must be positive".into());
        }
        if self.rnn_hidden == 0 || self.rnn_layers == 0 {
            return fail("recurrent hidden size and layer count must be positive".into());
        }
        Ok(())
    }

    /// Blocks per forget-update module: `⌈log_k c⌉`.
    pub fn blocks_per_module(&self) -> usize {
        blocks_per_module(self.k, self.c)
    }

    /// Width of the channel vector sequence entering the first module.
    pub fn sequence_width(&self) -> usize {
        (self.n_way + 1) * self.d
    }

    /// Feature widths after the entry and after each module, e.g.
    /// `[384, 480, 672]` for the defaults.
    pub fn width_chain(&self) -> Vec<usize> {
        let mut widths = vec![self.sequence_width()];
        let ell = self.blocks_per_module();
        for fs in &self.filter_sizes {
            widths.push(widths.last().unwrap() + ell * fs);
        }
        widths
    }

    /// Dimension of the readout vector the prediction head consumes.
    pub fn head_input_dim(&self) -> usize {
        match self.variant {
            Variant::Proposed | Variant::UpdateOnly | Variant::Tcn => {
                *self.width_chain().last().unwrap()
            }
            Variant::GruHead | Variant::LstmHead => self.rnn_hidden,
        }
    }
}

enum SequenceStage {
    ForgetUpdate(Vec<ForgetUpdateModule>),
    UpdateOnly(Vec<UpdateOnlyModule>),
    Tcn(Vec<TcnStack>),
    Recurrent(RecurrentHead),
}

/// The full parameter set plus architecture hyperparameters.
pub struct FumModel<T: Element> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub feature: FeatureExtractor,
    stage: SequenceStage,
    head: PredictionHead,
    pub norm: Normalization,
}

impl<T: Element> FumModel<T> {
    /// Builds and initializes a model; all weights derive from the `init`
    /// stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng::stream(seed, "init");
        let mut store = ParamStore::new();
        let feature = FeatureExtractor::new(
            &mut store,
            "feature",
            config.c,
            config.d,
            config.h_sq,
            &mut rng,
        );
        let widths = config.width_chain();
        let stage = match config.variant {
            Variant::Proposed => SequenceStage::ForgetUpdate(
                config
                    .filter_sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &fs)| {
                        ForgetUpdateModule::new(
                            &mut store,
                            &format!("fum{}", i + 1),
                            widths[i],
                            fs,
                            config.k,
                            config.c,
                            &mut rng,
                        )
                    })
                    .collect(),
            ),
            Variant::UpdateOnly => SequenceStage::UpdateOnly(
                config
                    .filter_sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &fs)| {
                        UpdateOnlyModule::new(
                            &mut store,
                            &format!("update{}", i + 1),
                            widths[i],
                            fs,
                            config.k,
                            config.c,
                            &mut rng,
                        )
                    })
                    .collect(),
            ),
            // The baseline mirrors the proposed model's widths: each stack
            // projects to the width the corresponding module would reach.
            Variant::Tcn => SequenceStage::Tcn(
                (0..config.filter_sizes.len())
                    .map(|i| {
                        TcnStack::new(
                            &mut store,
                            &format!("tcn{}", i + 1),
                            widths[i],
                            widths[i + 1],
                            config.k,
                            config.c,
                            &mut rng,
                        )
                    })
                    .collect(),
            ),
            Variant::GruHead | Variant::LstmHead => {
                let kind = if config.variant == Variant::GruHead {
                    RnnKind::Gru
                } else {
                    RnnKind::Lstm
                };
                SequenceStage::Recurrent(RecurrentHead::new(
                    &mut store,
                    "rnn",
                    kind,
                    config.sequence_width(),
                    config.rnn_hidden,
                    config.rnn_layers,
                    &mut rng,
                ))
            }
        };
        let head = PredictionHead::new(
            &mut store,
            "head",
            config.head_input_dim(),
            config.h1,
            config.h2,
            config.n_way,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            feature,
            stage,
            head,
            norm: Normalization::default(),
        })
    }

    /// φ over a batch of preprocessed images: `[B,3,84,84] -> [B,c,d]`.
    pub fn feature_extract<'t>(
        &self,
        frame: &Frame<'t, '_, T>,
        images: Var<'t, T>,
        mode: Mode,
        updates: &mut Vec<BufferUpdate<T>>,
    ) -> Result<Var<'t, T>, TensorError> {
        self.feature.forward(frame, images, mode, updates)
    }

    /// Sequence stage + readout for a `[Q, c, W]` batch of channel vector
    /// sequences; conv variants read the final step, recurrent variants
    /// the final hidden state.
    fn readout<'t>(
        &self,
        frame: &Frame<'t, '_, T>,
        seq: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let shape = seq.shape();
        let (q, c) = (shape[0], shape[1]);
        match &self.stage {
            SequenceStage::ForgetUpdate(modules) => {
                let mut h = seq;
                for module in modules {
                    h = module.forward(frame, h)?;
                }
                let w = h.shape()[2];
                h.narrow(1, c - 1, 1)?.reshape(&[q, w])
            }
            SequenceStage::UpdateOnly(modules) => {
                let mut h = seq;
                for module in modules {
                    h = module.forward(frame, h)?;
                }
                let w = h.shape()[2];
                h.narrow(1, c - 1, 1)?.reshape(&[q, w])
            }
            SequenceStage::Tcn(stacks) => {
                let mut h = seq;
                for stack in stacks {
                    h = stack.forward(frame, h)?;
                }
                let w = h.shape()[2];
                h.narrow(1, c - 1, 1)?.reshape(&[q, w])
            }
            SequenceStage::Recurrent(head) => head.forward(frame, seq),
        }
    }

    /// Full pre-readout sequence produced by the convolutional sequence
    /// stage: `[Q, c, W_in] -> [Q, c, W_out]`. Probing hook for causality
    /// and receptive-field checks; recurrent variants have no such
    /// sequence and are rejected.
    pub fn sequence_outputs<'t>(
        &self,
        frame: &Frame<'t, '_, T>,
        seq: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        match &self.stage {
            SequenceStage::ForgetUpdate(modules) => {
                let mut h = seq;
                for module in modules {
                    h = module.forward(frame, h)?;
                }
                Ok(h)
            }
            SequenceStage::UpdateOnly(modules) => {
                let mut h = seq;
                for module in modules {
                    h = module.forward(frame, h)?;
                }
                Ok(h)
            }
            SequenceStage::Tcn(stacks) => {
                let mut h = seq;
                for stack in stacks {
                    h = stack.forward(frame, h)?;
                }
                Ok(h)
            }
            SequenceStage::Recurrent(_) => Err(TensorError::InvalidShape {
                op: "sequence_outputs",
                shape: seq.shape(),
                reason: "recurrent variants have no pre-readout sequence".into(),
            }),
        }
    }

    /// Similarity scores for a batch of queries that share one support
    /// set: class maps and query maps are `[c, d]`, output is `[Q, N]`.
    pub fn forward_queries<'t>(
        &self,
        frame: &Frame<'t, '_, T>,
        class_maps: &[Var<'t, T>],
        query_maps: &[Var<'t, T>],
    ) -> Result<Var<'t, T>, TensorError> {
        if class_maps.len() != self.config.n_way {
            return Err(TensorError::InvalidShape {
                op: "forward_queries",
                shape: vec![class_maps.len()],
                reason: format!("expected {} class maps", self.config.n_way),
            });
        }
        let sequences: Vec<Var<'t, T>> = query_maps
            .iter()
            .map(|&q| build_channel_vector_sequence(class_maps, q).map(|cvs| cvs.data))
            .collect::<Result<_, _>>()?;
        let batch = stack_rows(&sequences)?;
        let readout = self.readout(frame, batch)?;
        self.head.forward(frame, readout)
    }

    /// Single-query forward pass: N similarity scores as a `[N]` vector.
    pub fn model_forward<'t>(
        &self,
        frame: &Frame<'t, '_, T>,
        class_maps: &[Var<'t, T>],
        query_map: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let scores = self.forward_queries(frame, class_maps, &[query_map])?;
        scores.reshape(&[self.config.n_way])
    }

    /// Full episode path: preprocessed image batch through φ, class-level
    /// averaging, sequence construction, and the head. Returns `[Q, N]`
    /// scores; labels come with the batch (see [`episode_batch`]).
    pub fn episode_scores<'t>(
        &self,
        frame: &Frame<'t, '_, T>,
        images: Var<'t, T>,
        n_way: usize,
        k_shot: usize,
        query_count: usize,
        mode: Mode,
        updates: &mut Vec<BufferUpdate<T>>,
    ) -> Result<Var<'t, T>, TensorError> {
        let maps = self.feature_extract(frame, images, mode, updates)?;
        let (c, d) = (self.config.c, self.config.d);
        let map_at = |i: usize| -> Result<Var<'t, T>, TensorError> {
            maps.narrow(0, i, 1)?.reshape(&[c, d])
        };
        let mut class_maps = Vec::with_capacity(n_way);
        for class in 0..n_way {
            let shots: Vec<Var<'t, T>> = (0..k_shot)
                .map(|s| map_at(class * k_shot + s))
                .collect::<Result<_, _>>()?;
            class_maps.push(class_level_average(&shots)?);
        }
        let query_maps: Vec<Var<'t, T>> = (0..query_count)
            .map(|i| map_at(n_way * k_shot + i))
            .collect::<Result<_, _>>()?;
        self.forward_queries(frame, &class_maps, &query_maps)
    }

    /// Like [`Self::episode_scores`] but bypassing the class-averaging
    /// stage (valid only for 1-shot episodes, where averaging is the
    /// identity). Used to verify that reduction explicitly.
    pub fn episode_scores_no_averaging<'t>(
        &self,
        frame: &Frame<'t, '_, T>,
        images: Var<'t, T>,
        n_way: usize,
        query_count: usize,
        mode: Mode,
        updates: &mut Vec<BufferUpdate<T>>,
    ) -> Result<Var<'t, T>, TensorError> {
        let maps = self.feature_extract(frame, images, mode, updates)?;
        let (c, d) = (self.config.c, self.config.d);
        let map_at = |i: usize| -> Result<Var<'t, T>, TensorError> {
            maps.narrow(0, i, 1)?.reshape(&[c, d])
        };
        let class_maps: Vec<Var<'t, T>> =
            (0..n_way).map(map_at).collect::<Result<_, _>>()?;
        let query_maps: Vec<Var<'t, T>> = (0..query_count)
            .map(|i| map_at(n_way + i))
            .collect::<Result<_, _>>()?;
        self.forward_queries(frame, &class_maps, &query_maps)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable_values()
    }
}

/// Builds the episode's image batch (support class-major, then queries)
/// in the preprocessing pipeline's output layout, plus the query labels.
pub fn episode_batch<T: Element>(
    episode: &Episode,
    norm: &Normalization,
) -> Result<(Tensor<T>, Vec<usize>), DataError> {
    let q = episode.query.len();
    let total = episode.n_way * episode.k_shot + q;
    let mut data = Vec::with_capacity(total * 3 * 84 * 84);
    for class in &episode.support {
        for img in class {
            let processed = preprocess(img, norm)?;
            data.extend(processed.data().iter().map(|&v| T::from_f64(v as f64)));
        }
    }
    let mut labels = Vec::with_capacity(q);
    for (img, label) in &episode.query {
        let processed = preprocess(img, norm)?;
        data.extend(processed.data().iter().map(|&v| T::from_f64(v as f64)));
        labels.push(*label);
    }
    let batch = Tensor::new(vec![total, 3, 84, 84], data).expect("sizes add up");
    Ok((batch, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::kaiming_init;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_maps(
        tape: &Tape<f32>,
        n: usize,
        c: usize,
        d: usize,
        seed: u64,
    ) -> Vec<Var<'_, f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| tape.input(&kaiming_init(&[c, d], d, &mut rng), false))
            .collect()
    }

    #[test]
    fn default_config_width_chain() {
        let config = ModelConfig::default();
        assert_eq!(config.sequence_width(), 384);
        assert_eq!(config.blocks_per_module(), 6);
        assert_eq!(config.width_chain(), vec![384, 480, 672]);
        assert_eq!(config.head_input_dim(), 672);
    }

    #[test]
    fn variant_round_trips_through_strings() {
        for v in [
            Variant::Proposed,
            Variant::Tcn,
            Variant::UpdateOnly,
            Variant::GruHead,
            Variant::LstmHead,
        ] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("resnet".parse::<Variant>().is_err());
    }

    #[test]
    fn model_forward_emits_n_scores() {
        let mut config = ModelConfig::tiny();
        config.n_way = 2;
        let model = FumModel::<f32>::new(config, 11).unwrap();
        let tape = Tape::new();
        let frame = model.store.lease(&tape);
        let maps = random_maps(&tape, 2, 8, 4, 0);
        let query = random_maps(&tape, 1, 8, 4, 1)[0];
        let scores = model.model_forward(&frame, &maps, query).unwrap();
        assert_eq!(scores.shape(), vec![2]);
    }

    #[test]
    fn swapping_class_maps_keeps_shape_and_finiteness() {
        let model = FumModel::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let tape = Tape::new();
        let frame = model.store.lease(&tape);
        let maps = random_maps(&tape, 2, 8, 4, 5);
        let query = random_maps(&tape, 1, 8, 4, 6)[0];
        let a = model.model_forward(&frame, &maps, query).unwrap();
        let b = model
            .model_forward(&frame, &[maps[1], maps[0]], query)
            .unwrap();
        assert_eq!(a.shape(), b.shape());
        assert!(b.value().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn every_variant_builds_and_runs() {
        for variant in [
            Variant::Proposed,
            Variant::Tcn,
            Variant::UpdateOnly,
            Variant::GruHead,
            Variant::LstmHead,
        ] {
            let mut config = ModelConfig::tiny();
            config.variant = variant;
            let model = FumModel::<f32>::new(config, 1).unwrap();
            let tape = Tape::new();
            let frame = model.store.lease(&tape);
            let maps = random_maps(&tape, 2, 8, 4, 2);
            let queries = random_maps(&tape, 3, 8, 4, 3);
            let scores = model.forward_queries(&frame, &maps, &queries).unwrap();
            assert_eq!(scores.shape(), vec![3, 2], "{variant}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = ModelConfig::default();
        config.k = 1;
        assert!(FumModel::<f32>::new(config, 0).is_err());
        let mut config = ModelConfig::default();
        config.filter_sizes = vec![];
        assert!(FumModel::<f32>::new(config, 0).is_err());
    }
}
