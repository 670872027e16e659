//! Forget-update blocks and modules, plus the ablation variants.
//!
//! A block splits into a forget path — a sigmoid gate over the causal
//! dilated convolution of the input, multiplied back onto the input — and
//! an update path — tanh(conv) ⊙ σ(conv) with two independent
//! convolutions producing `filter_size` new features. The two outputs are
//! stitched along the feature axis, so each block widens the sequence by
//! `filter_size` and the stack forms a dense connection pattern.
//!
//! A module stacks `⌈log_k c⌉` blocks with dilations `k⁰, k¹, …`, enough
//! for the last step's receptive field to cover all `c` channels.

use rand::Rng;

use crate::tensor::{concat_feature, Element, TensorError, Var};
use crate::nn::{CausalConv1d, Frame, ParamStore};

/// Number of blocks per module: smallest `ℓ` with `k^ℓ ≥ c`.
pub fn blocks_per_module(k: usize, c: usize) -> usize {
    assert!(k >= 2 && c >= 1);
    let mut ell = 0;
    let mut reach = 1usize;
    while reach < c {
        reach *= k;
        ell += 1;
    }
    ell
}

/// The three gated convolutions of one forget-update block. All three are
/// independently parameterized; the equations repeat `Causal(·)` without
/// sharing.
pub struct ForgetUpdateBlock {
    pub forget_conv: CausalConv1d,
    pub update_tanh_conv: CausalConv1d,
    pub update_gate_conv: CausalConv1d,
    pub in_feat: usize,
    pub filter_size: usize,
    pub dilation: usize,
}

impl ForgetUpdateBlock {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_feat: usize,
        filter_size: usize,
        k: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            forget_conv: CausalConv1d::new(store, &format!("{name}.forget"), in_feat, in_feat, k, dilation, rng),
            update_tanh_conv: CausalConv1d::new(store, &format!("{name}.update_tanh"), in_feat, filter_size, k, dilation, rng),
            update_gate_conv: CausalConv1d::new(store, &format!("{name}.update_gate"), in_feat, filter_size, k, dilation, rng),
            in_feat,
            filter_size,
            dilation,
        }
    }

    /// Sigmoid-gated copy of the input; same shape as the input.
    pub fn forget_block<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        self.forget_conv.forward(frame, x)?.sigmoid().mul(x)
    }

    /// `tanh(conv) ⊙ σ(conv)`, producing `filter_size` features per step.
    pub fn update_block<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let candidate = self.update_tanh_conv.forward(frame, x)?.tanh();
        let gate = self.update_gate_conv.forward(frame, x)?.sigmoid();
        candidate.mul(gate)
    }

    /// Forget and update outputs stitched along the feature axis:
    /// `[.., c, w] -> [.., c, w + filter_size]`.
    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        concat_feature(self.forget_block(frame, x)?, self.update_block(frame, x)?)
    }
}

/// `⌈log_k c⌉` forget-update blocks with exponentially growing dilation.
/// The loop returns the final block's output.
pub struct ForgetUpdateModule {
    pub blocks: Vec<ForgetUpdateBlock>,
    pub filter_size: usize,
}

impl ForgetUpdateModule {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_feat: usize,
        filter_size: usize,
        k: usize,
        c: usize,
        rng: &mut R,
    ) -> Self {
        let ell = blocks_per_module(k, c);
        let blocks = (0..ell)
            .map(|i| {
                ForgetUpdateBlock::new(
                    store,
                    &format!("{name}.block{i}"),
                    in_feat + i * filter_size,
                    filter_size,
                    k,
                    k.pow(i as u32),
                    rng,
                )
            })
            .collect();
        Self {
            blocks,
            filter_size,
        }
    }

    pub fn output_width(&self, in_feat: usize) -> usize {
        in_feat + self.blocks.len() * self.filter_size
    }

    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        mut x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        for block in &self.blocks {
            x = block.forward(frame, x)?;
        }
        Ok(x)
    }
}

/// Ablation: the update path alone establishes the dense connection and
/// the raw input passes through in place of the forget output.
pub struct UpdateOnlyModule {
    pub blocks: Vec<ForgetUpdateBlock>,
    pub filter_size: usize,
}

impl UpdateOnlyModule {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_feat: usize,
        filter_size: usize,
        k: usize,
        c: usize,
        rng: &mut R,
    ) -> Self {
        // Reuses the block type; the forget convolution it carries is
        // simply never evaluated in this variant.
        let module = ForgetUpdateModule::new(store, name, in_feat, filter_size, k, c, rng);
        Self {
            blocks: module.blocks,
            filter_size: module.filter_size,
        }
    }

    pub fn output_width(&self, in_feat: usize) -> usize {
        in_feat + self.blocks.len() * self.filter_size
    }

    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        mut x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        for block in &self.blocks {
            x = concat_feature(x, block.update_block(frame, x)?)?;
        }
        Ok(x)
    }
}

/// Baseline: causal dilated convolutions with identity connections. A
/// width projection on entry mirrors the widths the proposed model reaches
/// at the corresponding depth; each residual block keeps the width.
pub struct TcnStack {
    pub entry: CausalConv1d,
    pub blocks: Vec<(CausalConv1d, CausalConv1d)>,
    pub width: usize,
}

impl TcnStack {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_feat: usize,
        width: usize,
        k: usize,
        c: usize,
        rng: &mut R,
    ) -> Self {
        let entry = CausalConv1d::new(store, &format!("{name}.entry"), in_feat, width, 1, 1, rng);
        let blocks = (0..blocks_per_module(k, c))
            .map(|i| {
                let dilation = k.pow(i as u32);
                (
                    CausalConv1d::new(store, &format!("{name}.block{i}.conv1"), width, width, k, dilation, rng),
                    CausalConv1d::new(store, &format!("{name}.block{i}.conv2"), width, width, k, dilation, rng),
                )
            })
            .collect();
        Self {
            entry,
            blocks,
            width,
        }
    }

    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let mut h = self.entry.forward(frame, x)?;
        for (conv1, conv2) in &self.blocks {
            let inner = conv2.forward(frame, conv1.forward(frame, h)?.relu())?;
            h = h.add(inner)?;
        }
        Ok(h)
    }
}
