//! Named parameter tensors with paired gradient storage.

use localeq_core::rng::{Gaussian, Rng};

/// A trainable tensor: values plus a same-shape gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParameterTensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    /// Seeded normal initialization with the given standard deviation.
    pub fn normal(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut Rng,
        gauss: &mut Gaussian,
    ) -> Self {
        let mut t = Self::zeros(name, shape);
        for v in &mut t.values {
            *v = gauss.sample(rng) * std;
        }
        t
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        let mut t = Self::zeros(name, shape);
        t.values.fill(1.0);
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Adam moment slots for one tensor.
#[derive(Debug, Clone)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam optimizer over an ordered parameter list.
///
/// State is matched to tensors by position, so the caller must pass the
/// same tensor order on every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    slots: Vec<AdamSlot>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            slots: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut [&mut ParameterTensor]) {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| AdamSlot {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect();
        }
        assert_eq!(self.slots.len(), params.len(), "parameter list changed");
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for (tensor, slot) in params.iter_mut().zip(&mut self.slots) {
            for i in 0..tensor.values.len() {
                let g = tensor.grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bias1;
                let v_hat = slot.v[i] / bias2;
                tensor.values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            tensor.grad.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_converges_on_quadratic() {
        // Minimize (x - 3)^2 elementwise.
        let mut t = ParameterTensor::zeros("x", &[4]);
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            for i in 0..4 {
                t.grad[i] = 2.0 * (t.values[i] - 3.0);
            }
            adam.step(&mut [&mut t]);
        }
        for &v in &t.values {
            assert!((v - 3.0).abs() < 1e-3, "v = {v}");
        }
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        // With bias correction, the very first update is lr * sign(g).
        let mut t = ParameterTensor::zeros("x", &[1]);
        t.grad[0] = 0.5;
        let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8);
        adam.step(&mut [&mut t]);
        assert!((t.values[0] + 0.01).abs() < 1e-6, "{}", t.values[0]);
        assert_eq!(t.grad[0], 0.0, "step zeroes the gradient");
    }
}
