//! Adam with bias correction. Moment buffers align with the store's
//! trainable slots by position.

use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdamOutcome {
    Applied,
    /// At least one gradient value was NaN or infinite; parameters and
    /// optimizer state were left untouched.
    SkippedNonFinite,
}

pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, learning_rate: f32) -> Self {
        let (m, v) = store
            .trainable_ids()
            .map(|id| {
                let n = store.get(id).numel();
                (vec![0.0f32; n], vec![0.0f32; n])
            })
            .unzip();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable slot. `grads` holds one entry per
    /// trainable slot in `trainable_ids` order; `None` means no gradient
    /// reached that parameter this step and is treated as zero.
    pub fn step(
        &mut self,
        store: &mut ParamStore<f32>,
        grads: &[Option<Tensor<f32>>],
    ) -> AdamOutcome {
        let ids: Vec<_> = store.trainable_ids().collect();
        assert_eq!(ids.len(), grads.len(), "one gradient slot per parameter");
        for grad in grads.iter().flatten() {
            if grad.data().iter().any(|v| !v.is_finite()) {
                log::warn!("adam: non-finite gradient, skipping step {}", self.step + 1);
                return AdamOutcome::SkippedNonFinite;
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((id, grad), (m, v)) in ids
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            let params = store.data_mut(id);
            match grad {
                None => {
                    // Zero gradient: moments decay, parameters move only
                    // by whatever momentum is left in m.
                    for i in 0..params.len() {
                        m[i] *= self.beta1;
                        v[i] *= self.beta2;
                        params[i] -= self.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                    }
                }
                Some(grad) => {
                    let g = grad.data();
                    for i in 0..params.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        params[i] -=
                            self.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                    }
                }
            }
        }
        AdamOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param_store(value: f32) -> (ParamStore<f32>, crate::nn::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add_param("p", Tensor::from_vec(vec![value]));
        (store, id)
    }

    #[test]
    fn first_unit_gradient_step_moves_by_about_lr() {
        let (mut store, id) = single_param_store(1.0);
        let mut adam = Adam::new(&store, 0.001);
        adam.step(&mut store, &[Some(Tensor::from_vec(vec![1.0]))]);
        let moved = 1.0 - store.get(id).data()[0];
        // Bias correction makes the first step exactly lr/(1+eps)-sized.
        assert!((moved - 0.001).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn matches_hand_unrolled_recurrence() {
        let (mut store, id) = single_param_store(0.5);
        let mut adam = Adam::new(&store, 0.01);
        let gradient_values = [0.3f64, -0.7, 0.1];

        // Oracle in f64 arithmetic.
        let (b1, b2, eps, lr) = (0.9f64, 0.999, 1e-8, 0.01);
        let (mut m, mut v, mut p) = (0.0f64, 0.0, 0.5);
        for (t, g) in gradient_values.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32 + 1));
            let vhat = v / (1.0 - b2.powi(t as i32 + 1));
            p -= lr * mhat / (vhat.sqrt() + eps);
        }

        for g in gradient_values {
            adam.step(&mut store, &[Some(Tensor::from_vec(vec![g as f32]))]);
        }
        let got = store.get(id).data()[0] as f64;
        assert!((got - p).abs() < 1e-6, "{got} vs {p}");
    }

    #[test]
    fn zero_gradients_are_a_noop() {
        let (mut store, id) = single_param_store(2.5);
        let mut adam = Adam::new(&store, 0.01);
        for _ in 0..5 {
            adam.step(&mut store, &[Some(Tensor::from_vec(vec![0.0]))]);
        }
        assert_eq!(store.get(id).data()[0], 2.5);
        // Missing gradients behave the same way.
        adam.step(&mut store, &[None]);
        assert_eq!(store.get(id).data()[0], 2.5);
    }

    #[test]
    fn nonfinite_gradient_skips_the_whole_step() {
        let (mut store, id) = single_param_store(1.0);
        let mut adam = Adam::new(&store, 0.01);
        let outcome = adam.step(&mut store, &[Some(Tensor::from_vec(vec![f32::NAN]))]);
        assert_eq!(outcome, AdamOutcome::SkippedNonFinite);
        assert_eq!(store.get(id).data()[0], 1.0);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let (mut store, id) = single_param_store(1.0);
            let mut adam = Adam::new(&store, 0.005);
            for t in 0..20 {
                let g = (t as f32 * 0.37).sin();
                adam.step(&mut store, &[Some(Tensor::from_vec(vec![g]))]);
            }
            store.get(id).data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
