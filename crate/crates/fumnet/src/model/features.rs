//! Feature extractor φ: a 4-layer conv block followed by a per-channel
//! squeeze network, mapping a `[3, 84, 84]` image to a `[c, d]` feature
//! map whose rows become the steps of the channel vector sequence.

use rand::Rng;

use crate::nn::{
    maxpool2x2, BatchNorm2d, BufferUpdate, Conv2dLayer, Frame, LinearLayer, Mode, ParamStore,
};
use crate::tensor::{Element, TensorError, Var};

const CONV_LAYERS: usize = 4;
/// Spatial size after two 2×2 pools on an 84×84 input: 84 → 42 → 21.
const SQUEEZE_INPUT: usize = 21 * 21;

pub struct FeatureExtractor {
    convs: Vec<Conv2dLayer>,
    norms: Vec<BatchNorm2d>,
    squeeze_hidden: LinearLayer,
    squeeze_out: LinearLayer,
    pub channels: usize,
    pub dim: usize,
}

impl FeatureExtractor {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        dim: usize,
        h_sq: usize,
        rng: &mut R,
    ) -> Self {
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        let mut norms = Vec::with_capacity(CONV_LAYERS);
        for i in 0..CONV_LAYERS {
            let in_ch = if i == 0 { 3 } else { channels };
            convs.push(Conv2dLayer::new(
                store,
                &format!("{name}.conv{}", i + 1),
                in_ch,
                channels,
                rng,
            ));
            norms.push(BatchNorm2d::new(
                store,
                &format!("{name}.bn{}", i + 1),
                channels,
            ));
        }
        // The squeeze weights are shared across all channels: each
        // channel's 441 activations pass through the same two layers.
        let squeeze_hidden =
            LinearLayer::new(store, &format!("{name}.squeeze1"), SQUEEZE_INPUT, h_sq, false, rng);
        let squeeze_out = LinearLayer::new(store, &format!("{name}.squeeze2"), h_sq, dim, false, rng);
        Self {
            convs,
            norms,
            squeeze_hidden,
            squeeze_out,
            channels,
            dim,
        }
    }

    /// `[B, 3, 84, 84] -> [B, c, d]`.
    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        images: Var<'t, T>,
        mode: Mode,
        updates: &mut Vec<BufferUpdate<T>>,
    ) -> Result<Var<'t, T>, TensorError> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != 84 || shape[3] != 84 {
            return Err(TensorError::InvalidShape {
                op: "feature_extract",
                shape,
                reason: "expected [batch, 3, 84, 84] preprocessed images".into(),
            });
        }
        let batch = shape[0];
        let mut h = images;
        for (i, (conv, norm)) in self.convs.iter().zip(&self.norms).enumerate() {
            h = conv.forward(frame, h)?;
            h = norm.forward(frame, h, mode, updates)?;
            h = h.relu();
            if i < 2 {
                h = maxpool2x2(h)?;
            }
        }
        debug_assert_eq!(h.shape()[2] * h.shape()[3], SQUEEZE_INPUT);
        let flat = h.reshape(&[batch * self.channels, SQUEEZE_INPUT])?;
        let hidden = self.squeeze_hidden.forward(frame, flat)?.relu();
        let out = self.squeeze_out.forward(frame, hidden)?;
        out.reshape(&[batch, self.channels, self.dim])
    }

    pub fn squeeze_input_dim() -> usize {
        SQUEEZE_INPUT
    }
}
