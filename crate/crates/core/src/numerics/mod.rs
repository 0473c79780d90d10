//! Minimal dense tensor math, layer forward/backward, optimizers and a
//! finite-difference gradient verifier. Everything downstream builds on it.
//!
//! The math here is generic over the scalar type (`f32` / `f64` via
//! [`Scalar`]); the rest of the pipeline instantiates it at `f64` through the
//! aliases at the crate root.

mod gradcheck;
mod net;
mod optim;
mod prob;
mod tensor;

pub use gradcheck::grad_check;
pub use net::{softmax_backward, softmax_in_place, Activation, DenseLayer, DenseNet};
pub use optim::{AdamState, Optimizer, OptimizerConfig, ParamTensor};
pub use prob::{bce, bce_grad, clamp_prob, sigmoid, PROB_CLAMP};
pub use tensor::{affine_forward, dot_product, Matrix, Vector};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the tensor math is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossless-enough conversion from `f64` constants.
    fn from_f64_const(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sequential reader over a flattened parameter vector, used when restoring
/// tensors in canonical order.
pub struct FlatReader<'a, T> {
    data: &'a [T],
    pos: usize,
}

impl<'a, T: Scalar> FlatReader<'a, T> {
    pub fn new(data: &'a [T]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take_into(&mut self, dst: &mut [T]) {
        let end = self.pos + dst.len();
        dst.copy_from_slice(&self.data[self.pos..end]);
        self.pos = end;
    }

    pub fn finish(self) {
        assert_eq!(self.pos, self.data.len(), "flat parameter length mismatch");
    }
}
