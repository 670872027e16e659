//! Fully-connected layer with optional weight normalization.
//!
//! Under weight normalization the stored matrix only provides row
//! directions; effective row `i` is `scale[i] · w[i] / ‖w[i]‖₂`, so the
//! norm of each effective row equals `|scale[i]|`.

use rand::Rng;

use super::init::kaiming_init;
use super::store::{Frame, ParamId, ParamStore};
use crate::tensor::{Element, Tensor, TensorError, Var};

pub struct LinearLayer {
    /// `[out, in]`; row directions when `weight_norm` is on.
    pub weight: ParamId,
    /// `[out]` per-row scales; present only with weight normalization.
    pub scale: Option<ParamId>,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        weight_norm: bool,
        rng: &mut R,
    ) -> Self {
        let w: Tensor<T> = kaiming_init(&[out_dim, in_dim], in_dim, rng);
        let scale = weight_norm.then(|| {
            // scale starts at the sampled row norms, so the effective
            // weight at initialization equals the Kaiming sample.
            let norms: Vec<T> = w
                .data()
                .chunks(in_dim)
                .map(|row| row.iter().map(|&v| v * v).sum::<T>().sqrt())
                .collect();
            store.add_param(format!("{name}.scale"), Tensor::from_vec(norms))
        });
        let weight = store.add_param(format!("{name}.weight"), w);
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            scale,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// The weight actually applied: reparameterized rows under weight
    /// normalization, the raw matrix otherwise.
    pub fn effective_weight<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let w = frame.var(self.weight);
        match self.scale {
            None => Ok(w),
            Some(scale) => {
                let norms = w.mul(w)?.row_sum()?.sqrt();
                let per_row = frame.var(scale).div(norms)?;
                w.mul_rows(per_row)
            }
        }
    }

    /// `[rows, in] -> [rows, out]`.
    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let w = self.effective_weight(frame)?;
        x.matmul_t(w)?.add_row_bias(frame.var(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plain_identity_weight_is_identity_map() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = LinearLayer::new(&mut store, "fc", 2, 2, false, &mut rng);
        store.set(
            layer.weight,
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), false);
        let y = layer.forward(&frame, x).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn weight_norm_unit_normalizes_rows() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = LinearLayer::new(&mut store, "fc", 2, 1, true, &mut rng);
        store.set(layer.weight, Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        store.set(layer.scale.unwrap(), Tensor::from_vec(vec![1.0]));
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let w = layer.effective_weight(&frame).unwrap().value();
        assert!((w.data()[0] - 0.6).abs() < 1e-12);
        assert!((w.data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn effective_row_norm_equals_scale_magnitude() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = LinearLayer::new(&mut store, "fc", 7, 5, true, &mut rng);
        store.set(
            layer.scale.unwrap(),
            Tensor::from_vec(vec![0.3, -1.2, 2.0, 0.05, 4.0]),
        );
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let w = layer.effective_weight(&frame).unwrap().value();
        for (i, expected) in [0.3f64, 1.2, 2.0, 0.05, 4.0].iter().enumerate() {
            let norm: f64 = w.data()[i * 7..(i + 1) * 7]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!((norm - expected).abs() < 1e-6, "row {i}: {norm} vs {expected}");
        }
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = LinearLayer::new(&mut store, "fc", 4, 2, false, &mut rng);
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&Tensor::zeros(&[3, 5]), false);
        assert!(layer.forward(&frame, x).is_err());
    }

    #[test]
    fn gradcheck_through_weight_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = kaiming_init::<f64, _>(&[3, 5], 5, &mut rng);
        let scale = kaiming_init::<f64, _>(&[3], 1, &mut rng);
        let bias = kaiming_init::<f64, _>(&[3], 3, &mut rng);
        let x = kaiming_init::<f64, _>(&[2, 5], 5, &mut rng);
        let report = gradcheck(
            |_tape, vars| {
                let (x, w, scale, bias) = (vars[0], vars[1], vars[2], vars[3]);
                let norms = w.mul(w)?.row_sum()?.sqrt();
                let w_eff = w.mul_rows(scale.div(norms)?)?;
                Ok(x.matmul_t(w_eff)?.add_row_bias(bias)?.tanh().sum_all())
            },
            &[x, w, scale, bias],
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }
}
