//! Reduce-on-plateau learning rate schedule: when the validation metric
//! fails to improve for `patience` consecutive evaluations, the learning
//! rate is reduced by 10% (multiplied by 0.9) and the counter resets.

pub struct PlateauSchedule {
    pub learning_rate: f32,
    pub patience: usize,
    pub factor: f32,
    best: f32,
    stagnant: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f32) -> Self {
        Self {
            learning_rate: initial_lr,
            patience: 7,
            factor: 0.9,
            best: f32::NEG_INFINITY,
            stagnant: 0,
        }
    }

    pub fn best_metric(&self) -> f32 {
        self.best
    }

    /// Feeds one validation metric; returns the new learning rate when a
    /// reduction fires.
    pub fn update(&mut self, metric: f32) -> Option<f32> {
        if metric > self.best {
            self.best = metric;
            self.stagnant = 0;
            return None;
        }
        self.stagnant += 1;
        if self.stagnant >= self.patience {
            self.learning_rate *= self.factor;
            self.stagnant = 0;
            Some(self.learning_rate)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_stagnant_evals_cut_lr_by_ten_percent() {
        let mut sched = PlateauSchedule::new(0.001);
        assert_eq!(sched.update(0.5), None); // first metric becomes best
        for i in 0..6 {
            assert_eq!(sched.update(0.5), None, "eval {i}");
        }
        let new_lr = sched.update(0.5);
        assert_eq!(new_lr, Some(0.001f32 * 0.9));
        assert!((sched.learning_rate - 0.0009).abs() < 1e-9);
    }

    #[test]
    fn improvement_resets_the_counter() {
        let mut sched = PlateauSchedule::new(0.001);
        sched.update(0.5);
        for _ in 0..6 {
            sched.update(0.4);
        }
        assert_eq!(sched.update(0.6), None); // improvement at eval 6
        assert_eq!(sched.learning_rate, 0.001);
        // Counter restarted: six more stagnations still change nothing.
        for _ in 0..6 {
            assert_eq!(sched.update(0.1), None);
        }
        assert!(sched.update(0.1).is_some());
    }

    #[test]
    fn strictly_increasing_metrics_never_reduce() {
        let mut sched = PlateauSchedule::new(0.001);
        for i in 0..100 {
            assert_eq!(sched.update(i as f32), None);
        }
        assert_eq!(sched.learning_rate, 0.001);
    }

    #[test]
    fn rate_is_initial_times_factor_to_the_triggers() {
        let mut sched = PlateauSchedule::new(0.001);
        sched.update(1.0);
        let mut expected = 0.001f32;
        for trigger in 0..5 {
            for _ in 0..6 {
                assert_eq!(sched.update(0.0), None);
            }
            let got = sched.update(0.0).expect("seventh stagnation triggers");
            expected *= 0.9;
            assert_eq!(got, expected, "trigger {trigger}");
        }
    }

    #[test]
    fn rate_is_non_increasing() {
        let mut sched = PlateauSchedule::new(0.01);
        let mut last = sched.learning_rate;
        for i in 0..200 {
            sched.update(((i * 7919) % 13) as f32 / 13.0);
            assert!(sched.learning_rate <= last);
            last = sched.learning_rate;
        }
    }
}
