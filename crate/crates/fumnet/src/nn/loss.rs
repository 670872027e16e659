//! Classification loss. The similarity scores the prediction head emits
//! are treated as logits under a softmax cross-entropy.

use crate::tensor::{Element, TensorError, Var};

/// Loss of a single `[N]` score vector against one label, as a `[1]`
/// scalar. Stabilized by max-subtraction inside the softmax.
pub fn softmax_cross_entropy<'t, T: Element>(
    logits: Var<'t, T>,
    label: usize,
) -> Result<Var<'t, T>, TensorError> {
    let shape = logits.shape();
    if shape.len() != 1 {
        return Err(TensorError::InvalidShape {
            op: "softmax_cross_entropy",
            shape,
            reason: "expected a rank-1 score vector".into(),
        });
    }
    logits
        .reshape(&[1, shape[0]])?
        .cross_entropy_rows(&[label])
}

/// Mean loss over a `[B, N]` batch of score rows, as a `[1]` scalar.
pub fn mean_cross_entropy<'t, T: Element>(
    logits: Var<'t, T>,
    labels: &[usize],
) -> Result<Var<'t, T>, TensorError> {
    let losses = logits.cross_entropy_rows(labels)?;
    Ok(losses
        .sum_all()
        .scale(T::from_f64(1.0 / labels.len() as f64)))
}
