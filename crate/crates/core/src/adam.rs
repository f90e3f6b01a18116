//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, CoreError, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(CoreError::Invalid {
                what: "adam hyperparameters",
                reason: reason.to_string(),
            })
        };
        if !(self.lr >= 0.0) {
            return bad("lr must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step_count: 0,
            hyper,
        })
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One bias-corrected step. Non-finite gradients leave everything untouched.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(CoreError::Shape {
                what: "adam parameter vector",
                expected: self.len(),
                got: if params.len() != self.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        check_finite("gradient", grads)?;
        self.step_count += 1;
        let h = self.hyper;
        let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
        let one = T::one();
        let lr = T::lit(h.lr);
        let decay = one - lr * T::lit(h.weight_decay);
        let bc1 = one - T::lit(h.beta1.powi(self.step_count.min(i32::MAX as u64) as i32));
        let bc2 = one - T::lit(h.beta2.powi(self.step_count.min(i32::MAX as u64) as i32));
        let eps = T::lit(h.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *p *= decay;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
