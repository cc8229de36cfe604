//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything that can hand out its trainable tensors by name.
pub trait ParamAccess {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor>;
}

impl ParamAccess for BTreeMap<String, Tensor> {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.get_mut(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Registers a trainable parameter with zeroed moments.
    pub fn register(&mut self, name: &str, shape: &[usize]) {
        self.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        });
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.moments.contains_key(name)
    }

    /// One Adam update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut impl ParamAccess, grads: &Gradients) -> Result<()> {
        for (name, grad) in grads.iter() {
            let moments = self
                .moments
                .get(name)
                .ok_or_else(|| Error::UnregisteredParam(name.clone()))?;
            if moments.m.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: moments.m.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            let param = params
                .param_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if param.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: param.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (name, grad) in grads.iter() {
            let moments = self.moments.get_mut(name).expect("checked above");
            let param = params.param_mut(name).expect("checked above");
            let (m, v) = (moments.m.data_mut(), moments.v.data_mut());
            for (((p, g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
