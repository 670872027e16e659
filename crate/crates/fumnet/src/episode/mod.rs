//! Episodic data pipeline: datasets, N-way K-shot sampling, image
//! preprocessing, class-level feature averaging, and channel vector
//! sequence construction.

mod folder;
mod preprocess;
mod sampler;
mod sequence;
mod synthetic;

pub use folder::{load_folder_dataset, save_dataset_as_folder, write_split_files};
pub use preprocess::{preprocess, Normalization, TARGET_SIZE};
pub use sampler::sample_episode;
pub use sequence::{build_channel_vector_sequence, class_level_average, ChannelVectorSequence};
pub use synthetic::{generate_synthetic_dataset, synthetic_splits, SyntheticSpec};

use std::path::PathBuf;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One class: a name and its raw images, each `[3, H, W]` with values in
/// `[0, 1]`.
pub struct ClassRecord {
    pub name: String,
    pub samples: Vec<Tensor<f32>>,
}

/// A split's worth of classes. Read-only once constructed.
pub struct Dataset {
    pub split: Split,
    classes: Vec<ClassRecord>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("split", &self.split)
            .field("classes", &self.classes.len())
            .field("min_class_size", &self.min_class_size())
            .finish()
    }
}

impl Dataset {
    pub fn new(split: Split, classes: Vec<ClassRecord>) -> Result<Self, DataError> {
        for (i, class) in classes.iter().enumerate() {
            if classes[..i].iter().any(|c| c.name == class.name) {
                return Err(DataError::DuplicateClass(class.name.clone()));
            }
            if class.samples.len() < 2 {
                return Err(DataError::TooFewSamples(class.name.clone()));
            }
        }
        Ok(Self { split, classes })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassRecord] {
        &self.classes
    }

    pub fn class(&self, index: usize) -> &ClassRecord {
        &self.classes[index]
    }

    pub fn min_class_size(&self) -> usize {
        self.classes
            .iter()
            .map(|c| c.samples.len())
            .min()
            .unwrap_or(0)
    }
}

/// Identifies a sample by `(class index, sample index)` within a dataset;
/// episode disjointness is defined over these keys.
pub type SampleKey = (usize, usize);

/// One N-way K-shot task. `support[i]` holds class `i`'s K support images;
/// query labels index the episode's own class ordering (the i-th sampled
/// class is label `i`), never global class ids.
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub support: Vec<Vec<Tensor<f32>>>,
    pub query: Vec<(Tensor<f32>, usize)>,
    pub support_keys: Vec<Vec<SampleKey>>,
    pub query_keys: Vec<SampleKey>,
}

impl std::fmt::Debug for Episode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Episode")
            .field("n_way", &self.n_way)
            .field("k_shot", &self.k_shot)
            .field("queries", &self.query.len())
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset has {available} classes, need {needed}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class} has {available} samples, need {needed} (k_shot + per-class query)")]
    InsufficientSamples {
        class: String,
        needed: usize,
        available: usize,
    },
    #[error("duplicate class name {0}")]
    DuplicateClass(String),
    #[error("class {0} has fewer than 2 samples")]
    TooFewSamples(String),
    #[error("split file {0} lists no classes")]
    EmptySplit(PathBuf),
    #[error("class directory for {class} missing under {root}")]
    MissingClassDir { class: String, root: PathBuf },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {source}")]
    BadImage {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("degenerate image dimensions {width}x{height}")]
    DegenerateImage { width: usize, height: usize },
    #[error("invalid synthetic dataset config: {0}")]
    InvalidConfig(String),
}
