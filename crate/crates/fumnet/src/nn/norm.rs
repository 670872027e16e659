//! Batch normalization over `[B, C, H, W]`, standard (non-episodic):
//! train mode normalizes with batch statistics and maintains running
//! averages, eval mode normalizes with the running averages.

use super::store::{BufferUpdate, Frame, ParamId, ParamStore};
use crate::tensor::{Element, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
            ),
            channels,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Train mode appends the pending running-statistics writes to
    /// `updates`; the caller applies them to the store after the step.
    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
        mode: Mode,
        updates: &mut Vec<BufferUpdate<T>>,
    ) -> Result<Var<'t, T>, TensorError> {
        let gamma = frame.var(self.gamma);
        let beta = frame.var(self.beta);
        match mode {
            Mode::Eval => x.batchnorm_eval(
                gamma,
                beta,
                frame.buffer(self.running_mean).data(),
                frame.buffer(self.running_var).data(),
                T::from_f64(self.eps),
            ),
            Mode::Train => {
                let (out, batch_mean, batch_var) =
                    x.batchnorm_train(gamma, beta, T::from_f64(self.eps))?;
                let shape = x.shape();
                let count = shape[0] * shape[2] * shape[3];
                // Running variance uses the unbiased estimator, as is
                // conventional for the eval-time statistics.
                let bessel = if count > 1 {
                    count as f64 / (count as f64 - 1.0)
                } else {
                    1.0
                };
                let m = T::from_f64(self.momentum);
                let keep = T::one() - m;
                let new_mean = frame
                    .buffer(self.running_mean)
                    .data()
                    .iter()
                    .zip(&batch_mean)
                    .map(|(&old, &new)| keep * old + m * new)
                    .collect();
                let new_var = frame
                    .buffer(self.running_var)
                    .data()
                    .iter()
                    .zip(&batch_var)
                    .map(|(&old, &new)| keep * old + m * new * T::from_f64(bessel))
                    .collect();
                updates.push(BufferUpdate {
                    id: self.running_mean,
                    value: new_mean,
                });
                updates.push(BufferUpdate {
                    id: self.running_var,
                    value: new_var,
                });
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::kaiming_init;
    use crate::tensor::{gradcheck, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        kaiming_init(shape, 1, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn train_mode_standardizes_per_channel() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 3);
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&random_input(&[4, 3, 5, 5], 2), false);
        let mut updates = Vec::new();
        let y = bn
            .forward(&frame, x, Mode::Train, &mut updates)
            .unwrap()
            .value();

        let plane = 25;
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..4 {
                let base = (b * 3 + c) * plane;
                vals.extend_from_slice(&y.data()[base..base + plane]);
            }
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
        assert_eq!(updates.len(), 2);
    }

    #[test]
    fn eval_mode_with_unit_stats_is_identity_up_to_eps() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let input = random_input(&[1, 2, 4, 4], 3);
        let x = tape.input(&input, false);
        let mut updates = Vec::new();
        let y = bn
            .forward(&frame, x, Mode::Eval, &mut updates)
            .unwrap()
            .value();
        for (a, b) in input.data().iter().zip(y.data()) {
            // scaled by 1/sqrt(1 + 1e-5)
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }
        assert!(updates.is_empty());
    }

    #[test]
    fn running_stats_follow_momentum_rule() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let input = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut updates = Vec::new();
        {
            let tape = Tape::new();
            let frame = store.lease(&tape);
            let x = tape.input(&input, false);
            bn.forward(&frame, x, Mode::Train, &mut updates).unwrap();
        }
        store.apply_updates(updates);
        // batch mean 2.5, biased var 1.25, unbiased 1.25*4/3
        let expected_mean = 0.9 * 0.0 + 0.1 * 2.5;
        let expected_var = 0.9 * 1.0 + 0.1 * (1.25 * 4.0 / 3.0);
        assert!((store.get(bn.running_mean).data()[0] - expected_mean).abs() < 1e-12);
        assert!((store.get(bn.running_var).data()[0] - expected_var).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(&Tensor::zeros(&[0, 2, 3, 3]), false);
        let mut updates = Vec::new();
        assert!(bn.forward(&frame, x, Mode::Train, &mut updates).is_err());
    }

    #[test]
    fn gradcheck_train_mode() {
        let x = random_input(&[2, 4, 5, 5], 5);
        let gamma = random_input(&[4], 6);
        let beta = random_input(&[4], 7);
        let report = gradcheck(
            |_tape, vars| {
                let (out, _, _) = vars[0].batchnorm_train(vars[1], vars[2], 1e-5)?;
                Ok(out.tanh().sum_all())
            },
            &[x, gamma, beta],
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn gradcheck_eval_mode() {
        let x = random_input(&[2, 3, 4, 4], 8);
        let gamma = random_input(&[3], 9);
        let beta = random_input(&[3], 10);
        let report = gradcheck(
            |_tape, vars| {
                let rm = [0.1, -0.2, 0.05];
                let rv = [1.1, 0.9, 1.4];
                let out = vars[0].batchnorm_eval(vars[1], vars[2], &rm, &rv, 1e-5)?;
                Ok(out.sigmoid().sum_all())
            },
            &[x, gamma, beta],
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }
}
