//! 2-D convolution layer: 64-style 3×3 kernels, stride 1, zero padding 1,
//! so spatial size is preserved.

use rand::Rng;

use super::init::kaiming_init;
use super::store::{Frame, ParamId, ParamStore};
use crate::tensor::{Element, Tensor, TensorError, Var};

pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2dLayer {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_param(
            format!("{name}.weight"),
            kaiming_init(&[out_ch, in_ch, 3, 3], in_ch * 9, rng),
        );
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
        }
    }

    /// `[B, in_ch, H, W] -> [B, out_ch, H, W]`.
    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        x.conv2d3x3(frame.var(self.weight), frame.var(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck_sampled, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_with_weights(
        store: &mut ParamStore<f64>,
        in_ch: usize,
        out_ch: usize,
        weight: Tensor<f64>,
        bias: Tensor<f64>,
    ) -> Conv2dLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Conv2dLayer::new(store, "conv", in_ch, out_ch, &mut rng);
        store.set(layer.weight, weight);
        store.set(layer.bias, bias);
        layer
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let mut store = ParamStore::new();
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // weight[0,0,1,1]
        let layer = layer_with_weights(&mut store, 1, 1, w, Tensor::zeros(&[1]));

        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&Tensor::full(&[1, 1, 3, 3], 1.0), false);
        let y = layer.forward(&frame, x).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let mut store = ParamStore::new();
        let layer = layer_with_weights(
            &mut store,
            2,
            3,
            Tensor::zeros(&[3, 2, 3, 3]),
            Tensor::from_vec(vec![0.5, -1.0, 2.0]),
        );
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&Tensor::full(&[1, 2, 4, 4], 0.7), false);
        let y = layer.forward(&frame, x).unwrap().value();
        for c in 0..3 {
            for i in 0..16 {
                assert_eq!(y.data()[c * 16 + i], [0.5, -1.0, 2.0][c]);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Conv2dLayer::new(&mut store, "conv", 3, 4, &mut rng);
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&Tensor::zeros(&[1, 2, 4, 4]), false);
        assert!(layer.forward(&frame, x).is_err());
    }

    #[test]
    fn gradcheck_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = kaiming_init::<f64, _>(&[2, 3, 8, 8], 1, &mut rng);
        let w = kaiming_init::<f64, _>(&[4, 3, 3, 3], 27, &mut rng);
        let b = kaiming_init::<f64, _>(&[4], 4, &mut rng);
        let report = gradcheck_sampled(
            |_tape, vars| Ok(vars[0].conv2d3x3(vars[1], vars[2])?.tanh().sum_all()),
            &[x, w, b],
            1e-3,
            1e-4,
            40,
            7,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }
}
