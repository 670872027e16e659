//! Prediction head: three weight-normalized fully-connected layers with
//! ReLU between them, Kaiming-initialized, emitting one similarity score
//! per support class.

use rand::Rng;

use crate::nn::{Frame, LinearLayer, ParamStore};
use crate::tensor::{Element, TensorError, Var};

pub struct PredictionHead {
    layers: [LinearLayer; 3],
    pub out_dim: usize,
}

impl PredictionHead {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        h1: usize,
        h2: usize,
        n_way: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            layers: [
                LinearLayer::new(store, &format!("{name}.fc1"), in_dim, h1, true, rng),
                LinearLayer::new(store, &format!("{name}.fc2"), h1, h2, true, rng),
                LinearLayer::new(store, &format!("{name}.fc3"), h2, n_way, true, rng),
            ],
            out_dim: n_way,
        }
    }

    /// `[rows, in] -> [rows, n_way]` similarity scores.
    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let h1 = self.layers[0].forward(frame, x)?.relu();
        let h2 = self.layers[1].forward(frame, h1)?.relu();
        self.layers[2].forward(frame, h2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::kaiming_init;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn emits_n_scores_per_row() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = PredictionHead::new(&mut store, "head", 12, 8, 6, 5, &mut rng);
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&kaiming_init(&[3, 12], 12, &mut rng), false);
        let y = head.forward(&frame, x).unwrap();
        assert_eq!(y.shape(), vec![3, 5]);
    }

    #[test]
    fn all_three_layers_are_weight_normalized() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = PredictionHead::new(&mut store, "head", 4, 4, 4, 2, &mut rng);
        for layer in &head.layers {
            assert!(layer.scale.is_some());
        }
        let _ = Tensor::<f32>::zeros(&[1]);
    }
}
