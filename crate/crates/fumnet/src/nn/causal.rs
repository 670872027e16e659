//! Causal dilated 1-D convolution over a feature sequence.
//!
//! The sequence is left-padded with `(k-1)·dilation` zero steps, so the
//! output has the same length as the input and step `t` depends only on
//! input steps `≤ t`.

use rand::Rng;

use super::init::kaiming_init;
use super::store::{Frame, ParamId, ParamStore};
use crate::tensor::{Element, Tensor, TensorError, Var};

/// Dilation for layer `ℓ` (1-indexed) of a module with kernel size `k`:
/// `k^(ℓ-1)`, growing the receptive field exponentially with depth.
pub fn dilation_for_layer(k: usize, layer_ell: u32) -> usize {
    debug_assert!(k >= 2 && layer_ell >= 1);
    k.pow(layer_ell - 1)
}

pub struct CausalConv1d {
    /// `[out_feat, in_feat, kernel_size]`.
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_feat: usize,
    pub out_feat: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pad_left: usize,
}

impl CausalConv1d {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_feat: usize,
        out_feat: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_param(
            format!("{name}.weight"),
            kaiming_init(&[out_feat, in_feat, kernel_size], in_feat * kernel_size, rng),
        );
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros(&[out_feat]));
        Self {
            weight,
            bias,
            in_feat,
            out_feat,
            kernel_size,
            dilation,
            pad_left: (kernel_size - 1) * dilation,
        }
    }

    /// Diagnostics-only constructor that splits the padding across both
    /// ends instead of all-left. Output length is still preserved, but
    /// causality is deliberately broken; the check battery uses this to
    /// prove the causality test catches a bad implementation.
    pub fn with_padding_split<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_feat: usize,
        out_feat: usize,
        kernel_size: usize,
        dilation: usize,
        pad_left: usize,
        rng: &mut R,
    ) -> Self {
        assert!(pad_left <= (kernel_size - 1) * dilation);
        let mut layer = Self::new(store, name, in_feat, out_feat, kernel_size, dilation, rng);
        layer.pad_left = pad_left;
        layer
    }

    /// `[steps, in_feat] -> [steps, out_feat]`, or batched with a leading
    /// dimension.
    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        x.causal_conv1d(
            frame.var(self.weight),
            frame.var(self.bias),
            self.dilation,
            self.pad_left,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck_sampled, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn dilation_schedule_examples() {
        assert_eq!(dilation_for_layer(2, 1), 1);
        assert_eq!(dilation_for_layer(2, 6), 32);
        assert_eq!(dilation_for_layer(3, 1), 1);
    }

    #[test]
    fn identity_tap_on_current_step() {
        // k=2: tap 0 reaches back, tap 1 is the current step.
        let mut store = ParamStore::<f64>::new();
        let conv = CausalConv1d::new(&mut store, "c", 2, 2, 2, 1, &mut rng(0));
        let mut w = Tensor::zeros(&[2, 2, 2]);
        w.data_mut()[0 * 4 + 0 * 2 + 1] = 1.0; // w[0,0,1]
        w.data_mut()[1 * 4 + 1 * 2 + 1] = 1.0; // w[1,1,1]
        store.set(conv.weight, w);
        store.set(conv.bias, Tensor::zeros(&[2]));

        let tape = Tape::new();
        let frame = store.lease(&tape);
        let input = Tensor::new(vec![4, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let x = tape.input(&input, false);
        let y = conv.forward(&frame, x).unwrap();
        assert_eq!(y.value().data(), input.data());
    }

    #[test]
    fn first_step_sees_only_first_input_at_large_dilation() {
        let mut store = ParamStore::<f64>::new();
        let conv = CausalConv1d::new(&mut store, "c", 1, 1, 2, 32, &mut rng(1));

        let steps = 40;
        let base = Tensor::zeros(&[steps, 1]);
        let eval = |input: &Tensor<f64>| -> Vec<f64> {
            let tape = Tape::new();
            let frame = store.lease(&tape);
            let x = tape.input(input, false);
            conv.forward(&frame, x).unwrap().value().into_data()
        };
        let baseline = eval(&base);
        let mut bumped = base.clone();
        bumped.data_mut()[0] = 1.0;
        let out = eval(&bumped);
        assert_ne!(out[0], baseline[0], "out[0] must depend on x[0]");

        // Perturbing a later step never reaches earlier outputs.
        let mut late = base.clone();
        late.data_mut()[20] = 1.0;
        let out = eval(&late);
        assert_eq!(out[..20], baseline[..20]);
        assert_ne!(out[20], baseline[20]);
    }

    #[test]
    fn causality_holds_for_random_configs() {
        for (seed, (in_f, out_f, k, dil, steps)) in
            [(2u64, (3, 5, 2, 1, 9)), (3, (4, 2, 3, 2, 12)), (4, (2, 2, 2, 4, 16))]
        {
            let mut store = ParamStore::<f64>::new();
            let conv = CausalConv1d::new(&mut store, "c", in_f, out_f, k, dil, &mut rng(seed));
            let input = kaiming_init::<f64, _>(&[steps, in_f], 1, &mut rng(seed + 100));
            let eval = |input: &Tensor<f64>| -> Vec<f64> {
                let tape = Tape::new();
                let frame = store.lease(&tape);
                let x = tape.input(input, false);
                conv.forward(&frame, x).unwrap().value().into_data()
            };
            let baseline = eval(&input);
            assert_eq!(baseline.len(), steps * out_f, "equal length");
            for t in 0..steps {
                let mut perturbed = input.clone();
                perturbed.data_mut()[t * in_f] += 1.0;
                let out = eval(&perturbed);
                // Bit-identical before t, changed somewhere at or after t.
                assert_eq!(out[..t * out_f], baseline[..t * out_f], "step {t}");
            }
        }
    }

    #[test]
    fn stacked_receptive_field_is_two_to_the_l() {
        // L=3 layers, k=2, dilations 1,2,4 -> receptive field 8.
        let l = 3;
        let field = 1usize << l;
        let steps = field + 4;
        let mut store = ParamStore::<f64>::new();
        let convs: Vec<CausalConv1d> = (1..=l as u32)
            .map(|ell| {
                CausalConv1d::new(
                    &mut store,
                    &format!("c{ell}"),
                    1,
                    1,
                    2,
                    dilation_for_layer(2, ell),
                    &mut rng(7),
                )
            })
            .collect();
        // All-ones weights propagate any nonzero strictly within the field.
        for conv in &convs {
            store.set(conv.weight, Tensor::full(&[1, 1, 2], 1.0));
            store.set(conv.bias, Tensor::zeros(&[1]));
        }
        let eval = |input: &Tensor<f64>| -> Vec<f64> {
            let tape = Tape::new();
            let frame = store.lease(&tape);
            let mut h = tape.input(input, false);
            for conv in &convs {
                h = conv.forward(&frame, h).unwrap();
            }
            h.value().into_data()
        };
        let mut impulse = Tensor::zeros(&[steps, 1]);
        impulse.data_mut()[0] = 1.0;
        let response = eval(&impulse);
        assert_ne!(response[field - 1], 0.0, "out[2^L - 1] responds to in[0]");
        assert_eq!(response[field], 0.0, "out[2^L] does not respond to in[0]");
    }

    #[test]
    fn batched_input_matches_per_sequence_runs() {
        let mut store = ParamStore::<f64>::new();
        let conv = CausalConv1d::new(&mut store, "c", 3, 4, 2, 2, &mut rng(9));
        let a = kaiming_init::<f64, _>(&[6, 3], 1, &mut rng(10));
        let b = kaiming_init::<f64, _>(&[6, 3], 1, &mut rng(11));

        let tape = Tape::new();
        let frame = store.lease(&tape);
        let va = tape.input(&a, false);
        let vb = tape.input(&b, false);
        let single_a = conv.forward(&frame, va).unwrap().value();
        let single_b = conv.forward(&frame, vb).unwrap().value();

        let mut stacked = Vec::new();
        stacked.extend_from_slice(a.data());
        stacked.extend_from_slice(b.data());
        let batch = tape.input(&Tensor::new(vec![2, 6, 3], stacked).unwrap(), false);
        let both = conv.forward(&frame, batch).unwrap().value();
        assert_eq!(&both.data()[..24], single_a.data());
        assert_eq!(&both.data()[24..], single_b.data());
    }

    #[test]
    fn gradcheck_causal_conv() {
        let x = kaiming_init::<f64, _>(&[7, 3], 1, &mut rng(12));
        let w = kaiming_init::<f64, _>(&[4, 3, 2], 6, &mut rng(13));
        let b = kaiming_init::<f64, _>(&[4], 4, &mut rng(14));
        let report = gradcheck_sampled(
            |_tape, vars| {
                Ok(vars[0]
                    .causal_conv1d(vars[1], vars[2], 2, 2)?
                    .sigmoid()
                    .sum_all())
            },
            &[x, w, b],
            1e-3,
            1e-4,
            60,
            15,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }
}
