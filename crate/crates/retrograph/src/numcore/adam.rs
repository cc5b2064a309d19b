//! Adam optimizer with bias correction.

use super::tensor::Tensor2;
use super::NumError;
use std::collections::BTreeMap;

/// Optimizer state: step count plus first/second-moment accumulators
/// keyed by parameter name. Accumulators are created lazily and always
/// match the parameter shapes.
pub struct AdamState {
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    moments: BTreeMap<String, (Tensor2, Tensor2)>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over every named parameter. A missing
    /// gradient is treated as zero (the moments still decay).
    pub fn update(
        &mut self,
        params: &mut [(String, &mut Tensor2)],
        grads: &BTreeMap<String, Tensor2>,
    ) -> Result<(), NumError> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, param) in params.iter_mut() {
            let zero = Tensor2::zeros(param.rows(), param.cols());
            let grad = grads.get(name.as_str()).unwrap_or(&zero);
            if grad.shape() != param.shape() {
                return Err(NumError::ShapeMismatch {
                    expected: param.shape(),
                    got: grad.shape(),
                });
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (zero.clone(), zero.clone()));
            if m.shape() != param.shape() {
                return Err(NumError::ShapeMismatch {
                    expected: param.shape(),
                    got: m.shape(),
                });
            }
            for i in 0..param.len() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                param.data_mut()[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Moment tensors for checkpointing, in name order.
    pub fn moment_tensors(&self) -> impl Iterator<Item = (&str, &Tensor2, &Tensor2)> {
        self.moments.iter().map(|(n, (m, v))| (n.as_str(), m, v))
    }

    pub fn from_parts(
        step: u64,
        learning_rate: f64,
        moments: BTreeMap<String, (Tensor2, Tensor2)>,
    ) -> Self {
        AdamState {
            step,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments,
        }
    }
}
