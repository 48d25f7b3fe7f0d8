use std::collections::BTreeMap;

use super::{ModelParams, Real, TensorError};

/// Adam with bias correction and a constant learning rate.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter, then zeroes the gradients.
    ///
    /// Fails before touching anything if some parameter has no gradient.
    pub fn apply(&mut self, params: &mut ModelParams<T>) -> Result<(), TensorError> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(TensorError::MissingGradient(name.to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);
        let lr = T::lit(self.lr);
        let eps = T::lit(self.epsilon);

        for (name, tensor) in params.iter_mut() {
            let n = tensor.len();
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); n]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); n]);
            if m.len() != n {
                return Err(TensorError::DataLength {
                    len: m.len(),
                    rows: tensor.rows(),
                    cols: tensor.cols(),
                });
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}
