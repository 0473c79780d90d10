//! Feed-forward dense networks with hand-derived backprop.
//!
//! A [`DenseNet`] is an ordered stack of affine layers, each followed by an
//! element-wise (or softmax) activation. `forward` is read-only; training
//! uses `forward_train`, which records the activations `backward` needs.
//! Gradients accumulate additively into per-layer buffers until
//! `zero_grads` is called, so a batch is processed sample by sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prob::sigmoid;
use super::tensor::{affine_forward, Matrix, Vector};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(&self, z: &mut Vector<T>) {
        match self {
            Activation::Relu => {
                for v in z.as_mut_slice() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z.as_mut_slice() {
                    *v = sigmoid(*v);
                }
            }
            Activation::Softmax => softmax_in_place(z),
            Activation::Identity => {}
        }
    }

    /// Given the activation *output* `y` and upstream gradient `dy`, return
    /// the gradient with respect to the pre-activation input.
    fn grad<T: Scalar>(&self, y: &Vector<T>, dy: &Vector<T>) -> Vector<T> {
        match self {
            Activation::Relu => Vector::from_fn(y.len(), |i| {
                if y[i] > T::zero() {
                    dy[i]
                } else {
                    T::zero()
                }
            }),
            Activation::Sigmoid => {
                Vector::from_fn(y.len(), |i| dy[i] * y[i] * (T::one() - y[i]))
            }
            Activation::Softmax => softmax_backward(y, dy),
            Activation::Identity => dy.clone(),
        }
    }
}

/// Jacobian-vector product of softmax: `dz_i = y_i (dy_i - Σ_j dy_j y_j)`,
/// where `y` is the softmax output.
pub fn softmax_backward<T: Scalar>(y: &Vector<T>, dy: &Vector<T>) -> Vector<T> {
    let mut inner = T::zero();
    for i in 0..y.len() {
        inner += dy[i] * y[i];
    }
    Vector::from_fn(y.len(), |i| y[i] * (dy[i] - inner))
}

/// Softmax with the usual max-shift for stability; output sums to one.
pub fn softmax_in_place<T: Scalar>(z: &mut Vector<T>) {
    let max = z
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    for v in z.as_mut_slice() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.as_mut_slice() {
        *v = *v / sum;
    }
}

/// One affine layer plus activation, with gradient buffers of matching shape.
#[derive(Debug, Clone)]
pub struct DenseLayer<T> {
    pub weight: Matrix<T>, // out x in
    pub bias: Vector<T>,
    pub activation: Activation,
    pub grad_weight: Matrix<T>,
    pub grad_bias: Vector<T>,
}

impl<T: Scalar> DenseLayer<T> {
    /// Xavier-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn xavier<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Matrix::from_fn(out_dim, in_dim, |_, _| {
            T::from_f64_const(rng.random_range(-limit..limit))
        });
        Self {
            bias: Vector::zeros(out_dim),
            grad_weight: Matrix::zeros(out_dim, in_dim),
            grad_bias: Vector::zeros(out_dim),
            weight,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone)]
struct ForwardTrace<T> {
    input: Vector<T>,
    // post-activation output of every layer
    outputs: Vec<Vector<T>>,
}

/// Stack of dense layers; houses every DNN in the pipeline (experts, task
/// heads, user/item towers).
#[derive(Debug, Clone)]
pub struct DenseNet<T> {
    layers: Vec<DenseLayer<T>>,
    trace: Option<ForwardTrace<T>>,
}

impl<T: Scalar> DenseNet<T> {
    /// Build from explicit layer sizes: `input_dim -> sizes[0] -> ...`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        sizes: &[(usize, Activation)],
        rng: &mut R,
    ) -> Self {
        assert!(!sizes.is_empty(), "a net needs at least one layer");
        let mut layers = Vec::with_capacity(sizes.len());
        let mut prev = input_dim;
        for &(dim, act) in sizes {
            layers.push(DenseLayer::xavier(prev, dim, act, rng));
            prev = dim;
        }
        Self {
            layers,
            trace: None,
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Self {
        assert!(!layers.is_empty());
        for w in layers.windows(2) {
            assert_eq!(
                w[0].out_dim(),
                w[1].in_dim(),
                "layer output dim must match next layer input dim"
            );
        }
        Self {
            layers,
            trace: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    /// Read-only forward pass.
    pub fn forward(&self, x: &Vector<T>) -> Result<Vector<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut z = affine_forward(&cur, &layer.weight, &layer.bias)?;
            layer.activation.apply(&mut z);
            cur = z;
        }
        Ok(cur)
    }

    /// Forward pass that records the activations `backward` needs.
    /// Replaces any previously recorded pass.
    pub fn forward_train(&mut self, x: &Vector<T>) -> Result<Vector<T>> {
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut z = affine_forward(&cur, &layer.weight, &layer.bias)?;
            layer.activation.apply(&mut z);
            outputs.push(z.clone());
            cur = z;
        }
        self.trace = Some(ForwardTrace {
            input: x.clone(),
            outputs,
        });
        Ok(cur)
    }

    /// Backpropagate `upstream` (dLoss/dOutput) through the recorded pass.
    ///
    /// Parameter gradients are *accumulated* into the layer buffers; the
    /// gradient with respect to the input is returned. The recorded pass
    /// stays valid, so calling backward twice accumulates twice.
    pub fn backward(&mut self, upstream: &Vector<T>) -> Result<Vector<T>> {
        let trace = self.trace.as_ref().ok_or(Error::NoForwardRecorded)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "net_backward",
                expected: self.output_dim().to_string(),
                got: upstream.len().to_string(),
            });
        }
        let mut dy = upstream.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let y = &trace.outputs[i];
            let input = if i == 0 {
                &trace.input
            } else {
                &trace.outputs[i - 1]
            };
            let dz = layer.activation.grad(y, &dy);
            layer.grad_bias.add_scaled(&dz, T::one())?;
            layer.grad_weight.add_outer(&dz, input)?;
            dy = layer.weight.matvec_transposed(&dz)?;
        }
        Ok(dy)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.grad_weight.fill(T::zero());
            layer.grad_bias.fill(T::zero());
        }
    }

    pub fn clear_trace(&mut self) {
        self.trace = None;
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// (parameter, gradient) pairs in layer order: weight, then bias.
    pub fn param_tensors(&mut self) -> Vec<super::ParamTensor<'_, T>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(super::ParamTensor::new(
                layer.weight.as_mut_slice(),
                layer.grad_weight.as_slice(),
            ));
            out.push(super::ParamTensor::new(
                layer.bias.as_mut_slice(),
                layer.grad_bias.as_slice(),
            ));
        }
        out
    }

    pub fn push_flat_params(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
    }

    pub fn push_flat_grads(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            out.extend_from_slice(l.grad_weight.as_slice());
            out.extend_from_slice(l.grad_bias.as_slice());
        }
    }

    pub fn load_flat_params(&mut self, src: &mut super::FlatReader<'_, T>) {
        for l in &mut self.layers {
            src.take_into(l.weight.as_mut_slice());
            src.take_into(l.bias.as_mut_slice());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn relative_error(a: f64, n: f64) -> f64 {
        (a - n).abs() / n.abs().max(a.abs()).max(1e-8)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        for c in [-3.0_f64, 0.0, 7.5] {
            let mut z = Vector::from_vec(vec![c; 4]);
            softmax_in_place(&mut z);
            for i in 0..4 {
                assert!((z[i] - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_is_simplex_point() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let mut z = Vector::from_fn(n, |_| rng.random_range(-30.0..30.0));
            softmax_in_place(&mut z);
            let sum: f64 = z.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(z.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn relu_is_elementwise_max_with_zero() {
        let mut z = Vector::from_vec(vec![-1.0_f64, 0.0, 2.5]);
        Activation::Relu.apply(&mut z);
        assert_eq!(z.as_slice(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn single_linear_layer_gradients() {
        // loss = sum(output) on one identity-activation layer:
        // dL/dW = 1 xᵀ, dL/db = 1
        let mut net = DenseNet::from_layers(vec![DenseLayer {
            weight: Matrix::from_rows(vec![vec![0.3_f64, -0.2], vec![0.1, 0.4]]).unwrap(),
            bias: Vector::from_vec(vec![0.05, -0.1]),
            activation: Activation::Identity,
            grad_weight: Matrix::zeros(2, 2),
            grad_bias: Vector::zeros(2),
        }]);
        let x = Vector::from_vec(vec![1.5, -2.0]);
        net.forward_train(&x).unwrap();
        net.backward(&Vector::from_vec(vec![1.0, 1.0])).unwrap();
        let layer = &net.layers()[0];
        assert_eq!(layer.grad_bias.as_slice(), &[1.0, 1.0]);
        assert_eq!(layer.grad_weight.row(0), &[1.5, -2.0]);
        assert_eq!(layer.grad_weight.row(1), &[1.5, -2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::<f64>::new(
            3,
            &[(4, Activation::Relu), (2, Activation::Identity)],
            &mut rng,
        );
        let x = Vector::from_vec(vec![0.4, -0.7, 1.1]);
        net.forward_train(&x).unwrap();
        net.backward(&Vector::zeros(2)).unwrap();
        for layer in net.layers() {
            assert!(layer.grad_weight.as_slice().iter().all(|&g| g == 0.0));
            assert!(layer.grad_bias.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::<f64>::new(3, &[(2, Activation::Identity)], &mut rng);
        let err = net.backward(&Vector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::NoForwardRecorded));
    }

    #[test]
    fn backward_accumulation_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = DenseNet::<f64>::new(
            3,
            &[(4, Activation::Relu), (2, Activation::Identity)],
            &mut rng,
        );
        let x = Vector::from_vec(vec![0.4, -0.7, 1.1]);
        let up = Vector::from_vec(vec![0.3, -1.2]);
        net.forward_train(&x).unwrap();
        net.backward(&up).unwrap();
        let once: Vec<f64> = net.layers()[0].grad_weight.as_slice().to_vec();
        net.backward(&up).unwrap();
        let twice = net.layers()[0].grad_weight.as_slice();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn two_layer_relu_net_matches_finite_differences() {
        // loss = sum(net(x)); perturb every weight and bias
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut net = DenseNet::<f64>::new(
            4,
            &[(5, Activation::Relu), (3, Activation::Identity)],
            &mut rng,
        );
        let x = Vector::from_fn(4, |i| 0.3 * (i as f64 + 1.0) - 0.5);
        let up = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        net.forward_train(&x).unwrap();
        net.backward(&up).unwrap();

        let eps = 1e-6;
        let loss = |net: &DenseNet<f64>, x: &Vector<f64>| -> f64 {
            net.forward(x).unwrap().iter().sum()
        };
        for li in 0..net.layers().len() {
            let (rows, cols) = {
                let l = &net.layers()[li];
                (l.weight.rows(), l.weight.cols())
            };
            for r in 0..rows {
                for c in 0..cols {
                    let orig = net.layers()[li].weight.get(r, c);
                    net.layers_mut()[li].weight.set(r, c, orig + eps);
                    let lp = loss(&net, &x);
                    net.layers_mut()[li].weight.set(r, c, orig - eps);
                    let lm = loss(&net, &x);
                    net.layers_mut()[li].weight.set(r, c, orig);
                    let fd = (lp - lm) / (2.0 * eps);
                    let analytic = net.layers()[li].grad_weight.get(r, c);
                    assert!(
                        relative_error(analytic, fd) < 1e-4,
                        "layer {li} weight ({r},{c}): analytic {analytic} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = DenseNet::<f64>::new(3, &[(4, Activation::Sigmoid)], &mut rng);
        let x = Vector::from_vec(vec![0.1, 0.2, 0.3]);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
