//! Plain SGD with staircase exponential learning-rate decay.

use super::NnError;

/// SGD schedule state. The effective learning rate is
/// `base_lr * decay_rate^(step_count / decay_steps)` with integer division,
/// i.e. the rate drops once every `decay_steps` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub step_count: u64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(base_lr: f64, decay_rate: f64, decay_steps: u64, weight_decay: f64) -> Self {
        assert!(base_lr > 0.0 && decay_rate > 0.0 && decay_steps > 0);
        Self {
            base_lr,
            decay_rate,
            decay_steps,
            step_count: 0,
            weight_decay,
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.base_lr
            * self
                .decay_rate
                .powi((self.step_count / self.decay_steps) as i32)
    }

    /// Update one parameter tensor in place: `p <- p - lr * (g + wd * p)`.
    ///
    /// Does not advance the step counter; call [`OptimizerState::advance`]
    /// once per training step after all tensors are updated.
    pub fn apply(&self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::SizeMismatch(format!(
                "sgd update: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        let lr = self.effective_lr();
        for (p, &g) in params.iter_mut().zip(grads) {
            *p -= lr * (g + self.weight_decay * *p);
        }
        Ok(())
    }

    pub fn advance(&mut self) {
        self.step_count += 1;
    }
}
