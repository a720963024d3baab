//! Bias-corrected Adam.

use crate::autodiff::{Real, Tensor};

use super::{NnError, Result};

pub struct Adam<T: Real> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: u64,
    /// Per-parameter (m, v) moment buffers, allocated on first step.
    slots: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    /// Defaults β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: T) -> Adam<T> {
        Adam {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            slots: Vec::new(),
        }
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn set_lr(&mut self, lr: T) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over `params`, which must carry gradients and arrive
    /// in the same order on every call. Gradients are left untouched.
    pub fn step(&mut self, params: &[&Tensor<T>]) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
                .collect();
        }
        assert_eq!(self.slots.len(), params.len(), "parameter list changed");
        self.t += 1;
        let t = self.t as i32;
        let bias1 = T::one() - self.beta1.powi(t);
        let bias2 = T::one() - self.beta2.powi(t);
        let one = T::one();

        for (index, param) in params.iter().enumerate() {
            let grad = param
                .grad()
                .ok_or(NnError::MissingGrad { index })?;
            let (m, v) = &mut self.slots[index];
            assert_eq!(grad.len(), m.len(), "parameter {index} changed size");
            let mut data = param.to_vec();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] = data[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            param.set_data(data).expect("length preserved");
        }
        Ok(())
    }
}
