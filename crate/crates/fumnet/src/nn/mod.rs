//! Neural-network layers: 3×3 convolution, batch norm, max pooling,
//! fully-connected layers with optional weight normalization, and the
//! causal dilated 1-D convolution the forget-update blocks are built from.
//!
//! Layers own no data directly; parameters live in a [`ParamStore`] and
//! layers hold [`ParamId`] handles, so the same layer tree can be walked
//! by the optimizer, the checkpointer, and any number of parallel
//! evaluation threads.

mod causal;
mod conv;
pub mod init;
mod linear;
mod loss;
mod norm;
mod store;

pub use causal::{dilation_for_layer, CausalConv1d};
pub use conv::Conv2dLayer;
pub use init::kaiming_init;
pub use linear::LinearLayer;
pub use loss::{mean_cross_entropy, softmax_cross_entropy};
pub use norm::{BatchNorm2d, Mode};
pub use store::{BufferUpdate, Frame, ParamId, ParamStore, SlotKind};

use crate::tensor::{Element, TensorError, Var};

/// Non-overlapping 2×2 max pool over the trailing two spatial axes.
/// Ties route their gradient to the first maximal element in scan order.
pub fn maxpool2x2<'t, T: Element>(x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
    x.maxpool2x2()
}
