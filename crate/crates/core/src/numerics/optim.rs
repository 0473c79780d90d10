//! Plain SGD and bias-corrected Adam, operating on (parameter, gradient)
//! tensor pairs supplied in a stable order by the model.

use serde::{Deserialize, Serialize};

use super::Scalar;

/// A mutable view over one parameter tensor and its accumulated gradient.
pub struct ParamTensor<'a, T> {
    pub values: &'a mut [T],
    pub grads: &'a [T],
}

impl<'a, T> ParamTensor<'a, T> {
    pub fn new(values: &'a mut [T], grads: &'a [T]) -> Self {
        debug_assert_eq!(values.len(), grads.len());
        Self { values, grads }
    }
}

/// Optimizer choice plus hyperparameters, as carried in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr }
    }

    pub fn build<T: Scalar>(&self) -> Optimizer<T> {
        match *self {
            OptimizerConfig::Sgd { lr } => Optimizer::Sgd {
                lr: T::from_f64_const(lr),
            },
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => Optimizer::Adam(AdamState::new(
                T::from_f64_const(lr),
                T::from_f64_const(beta1),
                T::from_f64_const(beta2),
                T::from_f64_const(eps),
            )),
        }
    }
}

/// Per-parameter first/second moment accumulators for Adam.
///
/// Moment buffers are lazily sized to match the tensors seen on the first
/// step; the visitation order must stay stable across steps.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn apply(&mut self, tensors: &mut [ParamTensor<'_, T>]) {
        if self.m.is_empty() {
            self.m = tensors.iter().map(|t| vec![T::zero(); t.values.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), tensors.len(), "tensor count changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let corr1 = T::one() - self.beta1.powi(t);
        let corr2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for (i, tensor) in tensors.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            assert_eq!(m.len(), tensor.values.len(), "tensor shape changed between steps");
            for j in 0..tensor.values.len() {
                let g = tensor.grads[j];
                m[j] = self.beta1 * m[j] + (one - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (one - self.beta2) * g * g;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                tensor.values[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Optimizer with internal state; one instance per model.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd { lr: T },
    Adam(AdamState<T>),
}

impl<T: Scalar> Optimizer<T> {
    /// Apply one update step in place. Gradients are left untouched;
    /// callers zero them before the next accumulation.
    pub fn step(&mut self, mut tensors: Vec<ParamTensor<'_, T>>) {
        match self {
            Optimizer::Sgd { lr } => {
                for tensor in &mut tensors {
                    for j in 0..tensor.values.len() {
                        tensor.values[j] -= *lr * tensor.grads[j];
                    }
                }
            }
            Optimizer::Adam(state) => state.apply(&mut tensors),
        }
    }
}
