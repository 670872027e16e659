//! Few-shot image classification by sequence prediction over feature
//! channels: per-episode class embeddings and a query embedding are spliced
//! channel-by-channel into a channel vector sequence, which stacked
//! forget-update blocks (gated causal dilated convolutions) read before a
//! small prediction head scores the query against each support class.
//!
//! The crate is self-contained: it ships its own dense tensor engine with
//! reverse-mode autodiff, the NN layers the architecture needs, an episodic
//! sampler with a synthetic dataset generator, a meta-trainer, and the
//! ablation baselines (TCN, update-only, GRU/LSTM heads).

pub mod config;
pub mod diag;
pub mod episode;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;
pub mod tensor;

pub use tensor::{Tape, Tensor, TensorError, Var};
