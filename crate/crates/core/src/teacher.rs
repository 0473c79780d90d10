//! The multi-task teacher: shared experts, two softmax gates, two task heads,
//! and the factorized click/duration objective.
//!
//! Per input `x`, each task mixes the expert outputs with its own gate,
//! `e(x) = Σ_k g_k(x) f_k(x)` with `g(x) = softmax(W x)`; the click head
//! yields `pctr = σ(h_c(e_c(x)))`, the duration head `pcvr = σ(h_d(e_d(x)))`,
//! and the joint estimate factorizes as `pctcvr = pctr · pcvr`. Training
//! minimizes `w1 · L_d + w2 · L_c`: binary cross entropy of `pctcvr` against
//! the long-read label over all impressions, plus an auxiliary cross entropy
//! of `pctr` against the click label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelShape, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{EmbeddingSet, FeatureSchema, Sample};
use crate::numerics::{bce, bce_grad, sigmoid, softmax_backward, Activation, ParamTensor};
use crate::{DenseNet, Matrix, Real, Vector};

/// Probabilities produced by one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherOutput {
    pub pctr: Real,
    pub pcvr: Real,
    pub pctcvr: Real,
}

/// Loss terms of one batch: `total = w1 * duration + w2 * click`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherLosses {
    pub total: Real,
    pub duration: Real,
    pub click: Real,
    pub batch_len: usize,
}

impl TeacherLosses {
    /// Per-sample mean of the weighted loss, for log comparability across
    /// batch sizes.
    pub fn mean(&self) -> Real {
        self.total / self.batch_len as Real
    }
}

#[derive(Debug, Clone)]
struct Trace {
    user_ids: Vec<usize>,
    item_ids: Vec<usize>,
    x: Vector,
    expert_outputs: Vec<Vector>,
    gate_click: Vector,
    gate_duration: Vector,
}

/// MMoE + factorized-task teacher model; owns all of `θ_t`.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    schema: FeatureSchema,
    shape: ModelShape,
    embeddings: EmbeddingSet,
    experts: Vec<DenseNet>,
    gate_click: Matrix,
    gate_duration: Matrix,
    grad_gate_click: Matrix,
    grad_gate_duration: Matrix,
    head_click: DenseNet,
    head_duration: DenseNet,
    trace: Option<Trace>,
}

fn gate_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    use rand::Rng;
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

fn expert_sizes(shape: &ModelShape) -> Vec<(usize, Activation)> {
    shape
        .expert_hidden
        .iter()
        .map(|&d| (d, Activation::Relu))
        .collect()
}

fn head_sizes(shape: &ModelShape) -> Vec<(usize, Activation)> {
    let mut sizes: Vec<(usize, Activation)> = shape
        .head_hidden
        .iter()
        .map(|&d| (d, Activation::Relu))
        .collect();
    sizes.push((1, Activation::Identity));
    sizes
}

impl TeacherModel {
    pub fn init(schema: &FeatureSchema, shape: &ModelShape, seed: u64) -> Result<Self> {
        schema.validate()?;
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_dim = schema.teacher_input_dim();
        let embeddings = EmbeddingSet::init(schema, &mut rng);
        let experts: Vec<DenseNet> = (0..shape.num_experts)
            .map(|_| DenseNet::new(x_dim, &expert_sizes(shape), &mut rng))
            .collect();
        let gate_click = gate_init(shape.num_experts, x_dim, &mut rng);
        let gate_duration = gate_init(shape.num_experts, x_dim, &mut rng);
        let expert_out = shape.expert_output_dim();
        let head_click = DenseNet::new(expert_out, &head_sizes(shape), &mut rng);
        let head_duration = DenseNet::new(expert_out, &head_sizes(shape), &mut rng);
        Ok(Self {
            schema: schema.clone(),
            shape: shape.clone(),
            grad_gate_click: Matrix::zeros(shape.num_experts, x_dim),
            grad_gate_duration: Matrix::zeros(shape.num_experts, x_dim),
            embeddings,
            experts,
            gate_click,
            gate_duration,
            head_click,
            head_duration,
            trace: None,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Read-only forward pass.
    pub fn forward(&self, sample: &Sample) -> Result<TeacherOutput> {
        let x = self.embeddings.encode_teacher_input(sample);
        let e_c = expert_mixture(&x, &self.gate_click, &self.experts)?;
        let e_d = expert_mixture(&x, &self.gate_duration, &self.experts)?;
        let pctr = sigmoid(self.head_click.forward(&e_c)?[0]);
        let pcvr = sigmoid(self.head_duration.forward(&e_d)?[0]);
        Ok(TeacherOutput {
            pctr,
            pcvr,
            pctcvr: pctr * pcvr,
        })
    }

    /// Forward pass that records everything `backward` needs.
    pub fn forward_train(&mut self, sample: &Sample) -> Result<TeacherOutput> {
        let x = self.embeddings.encode_teacher_input(sample);
        let expert_outputs: Vec<Vector> = self
            .experts
            .iter_mut()
            .map(|f| f.forward_train(&x))
            .collect::<Result<_>>()?;
        let gate_click = gate_probs(&self.gate_click, &x)?;
        let gate_duration = gate_probs(&self.gate_duration, &x)?;
        let e_c = mix(&gate_click, &expert_outputs);
        let e_d = mix(&gate_duration, &expert_outputs);
        let pctr = sigmoid(self.head_click.forward_train(&e_c)?[0]);
        let pcvr = sigmoid(self.head_duration.forward_train(&e_d)?[0]);
        self.trace = Some(Trace {
            user_ids: sample.user_ids.clone(),
            item_ids: sample.item_ids.clone(),
            x,
            expert_outputs,
            gate_click,
            gate_duration,
        });
        Ok(TeacherOutput {
            pctr,
            pcvr,
            pctcvr: pctr * pcvr,
        })
    }

    /// Accumulate gradients of a scalar loss given its derivatives with
    /// respect to the click-head and duration-head logits.
    pub fn backward(&mut self, d_click_logit: Real, d_duration_logit: Real) -> Result<()> {
        let trace = self.trace.as_ref().ok_or(Error::NoForwardRecorded)?.clone();
        let d_ec = self
            .head_click
            .backward(&Vector::from_vec(vec![d_click_logit]))?;
        let d_ed = self
            .head_duration
            .backward(&Vector::from_vec(vec![d_duration_logit]))?;

        let k = self.experts.len();
        let mut dx = Vector::zeros(trace.x.len());
        for i in 0..k {
            // each expert feeds both task mixtures
            let mut up = d_ec.clone();
            up.scale(trace.gate_click[i]);
            up.add_scaled(&d_ed, trace.gate_duration[i])?;
            let dxi = self.experts[i].backward(&up)?;
            dx.add_scaled(&dxi, 1.0)?;
        }

        for (gate_out, d_e, gate_w, gate_grad) in [
            (
                &trace.gate_click,
                &d_ec,
                &self.gate_click,
                &mut self.grad_gate_click,
            ),
            (
                &trace.gate_duration,
                &d_ed,
                &self.gate_duration,
                &mut self.grad_gate_duration,
            ),
        ] {
            let d_gate = Vector::from_fn(k, |i| {
                d_e.dot(&trace.expert_outputs[i]).expect("expert dims")
            });
            let d_logits = softmax_backward(gate_out, &d_gate);
            gate_grad.add_outer(&d_logits, &trace.x)?;
            dx.add_scaled(&gate_w.matvec_transposed(&d_logits)?, 1.0)?;
        }

        self.embeddings
            .scatter_teacher_input_grad(&trace.user_ids, &trace.item_ids, dx.as_slice());
        Ok(())
    }

    /// Batch loss without touching gradients.
    pub fn loss(&self, batch: &[Sample], cfg: &TrainConfig) -> Result<TeacherLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut duration = 0.0;
        let mut click = 0.0;
        for sample in batch {
            let out = self.forward(sample)?;
            let (l_d, l_c, _, _) = loss_terms(&out, sample, cfg);
            duration += l_d;
            click += l_c;
        }
        finite_losses(duration, click, cfg, batch.len())
    }

    /// Accumulate gradients of the weighted loss over a batch. Gradient
    /// buffers are not zeroed first, so calls accumulate.
    pub fn accumulate_batch(&mut self, batch: &[Sample], cfg: &TrainConfig) -> Result<TeacherLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut duration = 0.0;
        let mut click = 0.0;
        for sample in batch {
            let out = self.forward_train(sample)?;
            let (l_d, l_c, d_ac, d_ad) = loss_terms(&out, sample, cfg);
            duration += l_d;
            click += l_c;
            self.backward(d_ac, d_ad)?;
        }
        finite_losses(duration, click, cfg, batch.len())
    }

    /// One optimizer step on the batch: zero grads, accumulate, update.
    pub fn train_step(
        &mut self,
        batch: &[Sample],
        cfg: &TrainConfig,
        optimizer: &mut crate::Optimizer,
    ) -> Result<TeacherLosses> {
        self.zero_grads();
        let losses = self.accumulate_batch(batch, cfg)?;
        optimizer.step(self.param_tensors());
        Ok(losses)
    }

    pub fn zero_grads(&mut self) {
        self.embeddings.zero_grads();
        self.grad_gate_click.fill(0.0);
        self.grad_gate_duration.fill(0.0);
        for f in &mut self.experts {
            f.zero_grads();
        }
        self.head_click.zero_grads();
        self.head_duration.zero_grads();
    }

    /// Canonical tensor order: embeddings, gates, experts, heads.
    pub fn param_tensors(&mut self) -> Vec<ParamTensor<'_, Real>> {
        let mut out = self.embeddings.param_tensors();
        out.push(ParamTensor::new(
            self.gate_click.as_mut_slice(),
            self.grad_gate_click.as_slice(),
        ));
        out.push(ParamTensor::new(
            self.gate_duration.as_mut_slice(),
            self.grad_gate_duration.as_slice(),
        ));
        for f in &mut self.experts {
            out.extend(f.param_tensors());
        }
        out.extend(self.head_click.param_tensors());
        out.extend(self.head_duration.param_tensors());
        out
    }

    /// All of `θ_t` flattened in canonical order.
    pub fn flat_params(&self) -> Vec<Real> {
        let mut out = Vec::new();
        self.embeddings.push_flat_params(&mut out);
        out.extend_from_slice(self.gate_click.as_slice());
        out.extend_from_slice(self.gate_duration.as_slice());
        for f in &self.experts {
            f.push_flat_params(&mut out);
        }
        self.head_click.push_flat_params(&mut out);
        self.head_duration.push_flat_params(&mut out);
        out
    }

    /// Accumulated gradients in the same order as [`flat_params`].
    pub fn flat_grads(&self) -> Vec<Real> {
        let mut out = Vec::new();
        self.embeddings.push_flat_grads(&mut out);
        out.extend_from_slice(self.grad_gate_click.as_slice());
        out.extend_from_slice(self.grad_gate_duration.as_slice());
        for f in &self.experts {
            f.push_flat_grads(&mut out);
        }
        self.head_click.push_flat_grads(&mut out);
        self.head_duration.push_flat_grads(&mut out);
        out
    }

    pub fn set_flat_params(&mut self, params: &[Real]) {
        let mut reader = crate::numerics::FlatReader::new(params);
        self.embeddings.load_flat_params(&mut reader);
        reader.take_into(self.gate_click.as_mut_slice());
        reader.take_into(self.gate_duration.as_mut_slice());
        for f in &mut self.experts {
            f.load_flat_params(&mut reader);
        }
        self.head_click.load_flat_params(&mut reader);
        self.head_duration.load_flat_params(&mut reader);
        reader.finish();
    }

    pub(crate) fn parts(
        &self,
    ) -> (
        &EmbeddingSet,
        &[DenseNet],
        &Matrix,
        &Matrix,
        &DenseNet,
        &DenseNet,
    ) {
        (
            &self.embeddings,
            &self.experts,
            &self.gate_click,
            &self.gate_duration,
            &self.head_click,
            &self.head_duration,
        )
    }

    pub(crate) fn from_parts(
        schema: FeatureSchema,
        shape: ModelShape,
        embeddings: EmbeddingSet,
        experts: Vec<DenseNet>,
        gate_click: Matrix,
        gate_duration: Matrix,
        head_click: DenseNet,
        head_duration: DenseNet,
    ) -> Self {
        let x_dim = schema.teacher_input_dim();
        let k = shape.num_experts;
        Self {
            schema,
            shape,
            embeddings,
            experts,
            grad_gate_click: Matrix::zeros(k, x_dim),
            grad_gate_duration: Matrix::zeros(k, x_dim),
            gate_click,
            gate_duration,
            head_click,
            head_duration,
            trace: None,
        }
    }

    #[cfg(test)]
    pub(crate) fn experts_mut(&mut self) -> &mut [DenseNet] {
        &mut self.experts
    }

    #[cfg(test)]
    pub(crate) fn heads_mut(&mut self) -> (&mut DenseNet, &mut DenseNet) {
        (&mut self.head_click, &mut self.head_duration)
    }

    #[cfg(test)]
    pub(crate) fn gates_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.gate_click, &mut self.gate_duration)
    }

    #[cfg(test)]
    pub(crate) fn head_grads(&self) -> (Vec<Real>, Vec<Real>) {
        let mut c = Vec::new();
        self.head_click.push_flat_grads(&mut c);
        let mut d = Vec::new();
        self.head_duration.push_flat_grads(&mut d);
        (c, d)
    }
}

/// Loss terms and head-logit gradients for one sample.
///
/// Returns `(l_d, l_c, dL/d a_c, dL/d a_d)` where the logit gradients already
/// carry the `w1`/`w2` weights.
pub(crate) fn loss_terms(
    out: &TeacherOutput,
    sample: &Sample,
    cfg: &TrainConfig,
) -> (Real, Real, Real, Real) {
    let z = sample.duration_label();
    let click_label = if cfg.paper_literal_click_label {
        z
    } else {
        sample.click_label()
    };
    let (p, s, q) = (out.pctr, out.pcvr, out.pctcvr);
    let l_d = bce(q, z);
    let l_c = bce(p, click_label);
    let dq = bce_grad(q, z);
    let dp = bce_grad(p, click_label);
    // chain through pctcvr = pctr * pcvr and the sigmoids
    let d_ac = cfg.w1 * dq * s * p * (1.0 - p) + cfg.w2 * dp * p * (1.0 - p);
    let d_ad = cfg.w1 * dq * p * s * (1.0 - s);
    (l_d, l_c, d_ac, d_ad)
}

fn finite_losses(
    duration: Real,
    click: Real,
    cfg: &TrainConfig,
    batch_len: usize,
) -> Result<TeacherLosses> {
    let total = cfg.w1 * duration + cfg.w2 * click;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(total));
    }
    Ok(TeacherLosses {
        total,
        duration,
        click,
        batch_len,
    })
}

fn gate_probs(gate: &Matrix, x: &Vector) -> Result<Vector> {
    let mut logits = gate.matvec(x)?;
    crate::numerics::softmax_in_place(&mut logits);
    Ok(logits)
}

fn mix(gate: &Vector, expert_outputs: &[Vector]) -> Vector {
    let mut out = Vector::zeros(expert_outputs[0].len());
    for (k, f) in expert_outputs.iter().enumerate() {
        out.add_scaled(f, gate[k]).expect("expert output dims");
    }
    out
}

/// Gated expert combination `Σ_k softmax(W x)_k · f_k(x)`; the same formula
/// serves both task mixtures.
pub fn expert_mixture(x: &Vector, gate_weights: &Matrix, experts: &[DenseNet]) -> Result<Vector> {
    let gate = gate_probs(gate_weights, x)?;
    let outputs: Vec<Vector> = experts
        .iter()
        .map(|f| f.forward(x))
        .collect::<Result<_>>()?;
    Ok(mix(&gate, &outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FieldSpec;
    use crate::numerics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![FieldSpec::new("user_id", 7), FieldSpec::new("u_a", 5)],
            vec![FieldSpec::new("item_id", 9), FieldSpec::new("i_a", 6)],
            3,
            4,
        )
        .unwrap()
    }

    fn tiny_shape() -> ModelShape {
        ModelShape {
            num_experts: 2,
            expert_hidden: vec![8, 4],
            head_hidden: vec![4],
            tower_hidden: vec![8, 4],
        }
    }

    fn random_sample(schema: &FeatureSchema, rng: &mut ChaCha8Rng) -> Sample {
        let user_ids = schema
            .user_fields
            .iter()
            .map(|f| rng.random_range(0..f.cardinality))
            .collect();
        let item_ids = schema
            .item_fields
            .iter()
            .map(|f| rng.random_range(0..f.cardinality))
            .collect();
        let dense = (0..schema.dense_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let clicked = rng.random_bool(0.5);
        let duration = if clicked {
            rng.random_range(1.0..120.0)
        } else {
            0.0
        };
        Sample::new(user_ids, item_ids, dense, clicked, duration, 50.0).unwrap()
    }

    fn random_batch(n: usize, seed: u64) -> (FeatureSchema, Vec<Sample>) {
        let schema = tiny_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = (0..n).map(|_| random_sample(&schema, &mut rng)).collect();
        (schema, batch)
    }

    /// Zero every expert/gate/head parameter and pin the head logits via the
    /// final-layer biases, so pctr/pcvr take exact chosen values.
    fn force_logits(model: &mut TeacherModel, click_logit: Real, duration_logit: Real) {
        for expert in model.experts_mut() {
            for layer in expert.layers_mut() {
                layer.weight.fill(0.0);
                layer.bias.fill(0.0);
            }
        }
        let (gc, gd) = model.gates_mut();
        gc.fill(0.0);
        gd.fill(0.0);
        let (hc, hd) = model.heads_mut();
        for (net, logit) in [(hc, click_logit), (hd, duration_logit)] {
            for layer in net.layers_mut() {
                layer.weight.fill(0.0);
                layer.bias.fill(0.0);
            }
            let last = net.layers_mut().last_mut().unwrap();
            last.bias[0] = logit;
        }
    }

    #[test]
    fn single_expert_mixture_is_that_expert() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let expert = DenseNet::new(5, &[(3, Activation::Relu)], &mut rng);
        let x = Vector::from_fn(5, |_| rng.random_range(-1.0..1.0));
        let gate = Matrix::from_fn(1, 5, |_, _| rng.random_range(-2.0..2.0));
        let mixed = expert_mixture(&x, &gate, std::slice::from_ref(&expert)).unwrap();
        assert_eq!(mixed.as_slice(), expert.forward(&x).unwrap().as_slice());
    }

    #[test]
    fn zero_gate_weights_average_the_experts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let experts = vec![
            DenseNet::new(5, &[(3, Activation::Relu)], &mut rng),
            DenseNet::new(5, &[(3, Activation::Relu)], &mut rng),
        ];
        let x = Vector::from_fn(5, |_| rng.random_range(-1.0..1.0));
        let gate = Matrix::zeros(2, 5);
        let mixed = expert_mixture(&x, &gate, &experts).unwrap();
        let a = experts[0].forward(&x).unwrap();
        let b = experts[1].forward(&x).unwrap();
        for i in 0..3 {
            assert!((mixed[i] - 0.5 * (a[i] + b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_matches_hand_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let experts = vec![
            DenseNet::new(4, &[(3, Activation::Relu)], &mut rng),
            DenseNet::new(4, &[(3, Activation::Relu)], &mut rng),
        ];
        let x = Vector::from_fn(4, |_| rng.random_range(-1.0..1.0));
        let gate = Matrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));

        // oracle: softmax of W x then the weighted sum, composed by hand
        let logits: Vec<f64> = (0..2)
            .map(|k| (0..4).map(|j| gate.get(k, j) * x[j]).sum())
            .collect();
        let m = logits[0].max(logits[1]);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s = e[0] + e[1];
        let g = [e[0] / s, e[1] / s];
        let f0 = experts[0].forward(&x).unwrap();
        let f1 = experts[1].forward(&x).unwrap();

        let mixed = expert_mixture(&x, &gate, &experts).unwrap();
        for i in 0..3 {
            let expected = g[0] * f0[i] + g[1] * f1[i];
            assert!((mixed[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn pctcvr_is_exact_product_and_below_min() {
        let (schema, batch) = random_batch(200, 40);
        let model = TeacherModel::init(&schema, &tiny_shape(), 11).unwrap();
        for sample in &batch {
            let out = model.forward(sample).unwrap();
            assert_eq!(out.pctcvr, out.pctr * out.pcvr);
            assert!(out.pctcvr <= out.pctr.min(out.pcvr));
        }
    }

    #[test]
    fn forced_half_probabilities_multiply_to_quarter() {
        let schema = tiny_schema();
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 5).unwrap();
        force_logits(&mut model, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_sample(&schema, &mut rng);
        let out = model.forward(&s).unwrap();
        assert_eq!(out.pctr, 0.5);
        assert_eq!(out.pcvr, 0.5);
        assert_eq!(out.pctcvr, 0.25);
    }

    #[test]
    fn saturated_pcvr_makes_pctcvr_approach_pctr() {
        let schema = tiny_schema();
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 5).unwrap();
        force_logits(&mut model, 0.37, 500.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_sample(&schema, &mut rng);
        let out = model.forward(&s).unwrap();
        assert!((out.pctcvr - out.pctr).abs() < 1e-12);
    }

    #[test]
    fn pctcvr_matches_separately_recomputed_product() {
        let (schema, batch) = random_batch(20, 41);
        let model = TeacherModel::init(&schema, &tiny_shape(), 21).unwrap();
        let (emb, experts, gate_c, gate_d, head_c, head_d) = model.parts();
        for sample in &batch {
            let x = emb.encode_teacher_input(sample);
            let pctr = sigmoid(head_c.forward(&expert_mixture(&x, gate_c, experts).unwrap()).unwrap()[0]);
            let pcvr = sigmoid(head_d.forward(&expert_mixture(&x, gate_d, experts).unwrap()).unwrap()[0]);
            let out = model.forward(sample).unwrap();
            assert_eq!(out.pctcvr, pctr * pcvr);
        }
    }

    #[test]
    fn near_perfect_predictions_give_near_zero_loss() {
        let schema = tiny_schema();
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 5).unwrap();
        // pctr -> 1 and pcvr -> 1, so pctcvr -> 1
        force_logits(&mut model, 500.0, 500.0);
        let batch = vec![
            Sample::new(vec![0, 0], vec![0, 0], vec![0.0; 3], true, 80.0, 50.0).unwrap(),
            Sample::new(vec![1, 1], vec![1, 1], vec![0.0; 3], true, 90.0, 50.0).unwrap(),
        ];
        let cfg = TrainConfig::default();
        let losses = model.loss(&batch, &cfg).unwrap();
        // each term is at most the clamped BCE floor
        assert!(losses.total < 4.0 * 2e-7, "losses: {losses:?}");
    }

    #[test]
    fn half_probability_costs_ln2_per_term() {
        let schema = tiny_schema();
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 5).unwrap();
        // pctr = 0.5, pcvr ~ 1 so pctcvr ~ 0.5
        force_logits(&mut model, 0.0, 500.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch: Vec<Sample> = (0..4).map(|_| random_sample(&schema, &mut rng)).collect();
        let cfg = TrainConfig::default();
        let losses = model.loss(&batch, &cfg).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((losses.duration - 4.0 * ln2).abs() < 1e-5);
        assert!((losses.click - 4.0 * ln2).abs() < 1e-5);
    }

    #[test]
    fn one_sample_loss_matches_hand_evaluation() {
        // y=1, z=1, pctr=0.8, pcvr=0.5, w1=w2=1:
        // L = -ln(0.4) - ln(0.8), evaluated independently at high precision
        let schema = tiny_schema();
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 5).unwrap();
        force_logits(&mut model, (0.8_f64 / 0.2).ln(), 0.0);
        let batch = vec![Sample::new(vec![0, 0], vec![0, 0], vec![0.0; 3], true, 70.0, 50.0).unwrap()];
        let cfg = TrainConfig::default();
        let losses = model.loss(&batch, &cfg).unwrap();
        assert!((losses.total - 1.1394342831883648).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_weights_leave_parameters_unchanged() {
        let (schema, batch) = random_batch(8, 42);
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 33).unwrap();
        let cfg = TrainConfig {
            w1: 0.0,
            w2: 0.0,
            ..TrainConfig::default()
        };
        let before = model.flat_params();
        let mut opt = cfg.optimizer.build();
        model.train_step(&batch, &cfg, &mut opt).unwrap();
        assert_eq!(model.flat_params(), before);
    }

    #[test]
    fn single_sample_overfits_within_fifty_steps() {
        let (schema, batch) = random_batch(1, 43);
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 34).unwrap();
        let cfg = TrainConfig::default();
        let mut opt = cfg.optimizer.build();
        let first = model.train_step(&batch, &cfg, &mut opt).unwrap().total;
        let mut last = first;
        for _ in 0..49 {
            last = model.train_step(&batch, &cfg, &mut opt).unwrap().total;
        }
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn gradients_match_finite_differences_across_all_groups() {
        let (schema, batch) = random_batch(16, 44);
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 35).unwrap();
        let cfg = TrainConfig::default();
        model.zero_grads();
        model.accumulate_batch(&batch, &cfg).unwrap();
        let params = model.flat_params();
        let analytic = model.flat_grads();

        let mut probe = model.clone();
        let mut loss = |p: &[f64]| {
            probe.set_flat_params(p);
            probe.loss(&batch, &cfg).unwrap().total
        };
        let err = grad_check(&mut loss, &params, &analytic, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn click_head_gets_gradient_through_duration_loss_only() {
        let (schema, batch) = random_batch(8, 45);
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 36).unwrap();
        // w2 = 0: the click head still couples in through pctcvr = pctr*pcvr
        let cfg = TrainConfig {
            w2: 0.0,
            ..TrainConfig::default()
        };
        model.zero_grads();
        model.accumulate_batch(&batch, &cfg).unwrap();
        let (click_grads, _) = model.head_grads();
        assert!(click_grads.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duration_head_gets_no_gradient_when_w1_zero() {
        let (schema, batch) = random_batch(8, 46);
        let mut model = TeacherModel::init(&schema, &tiny_shape(), 37).unwrap();
        let cfg = TrainConfig {
            w1: 0.0,
            ..TrainConfig::default()
        };
        model.zero_grads();
        model.accumulate_batch(&batch, &cfg).unwrap();
        let (_, duration_grads) = model.head_grads();
        assert!(duration_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_loss_is_permutation_invariant() {
        let (schema, mut batch) = random_batch(32, 47);
        let model = TeacherModel::init(&schema, &tiny_shape(), 38).unwrap();
        let cfg = TrainConfig::default();
        let a = model.loss(&batch, &cfg).unwrap().total;
        batch.reverse();
        let b = model.loss(&batch, &cfg).unwrap().total;
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let schema = tiny_schema();
        let model = TeacherModel::init(&schema, &tiny_shape(), 1).unwrap();
        let err = model.loss(&[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyBatch));
    }

    #[test]
    fn gate_outputs_lie_on_the_simplex() {
        let (schema, batch) = random_batch(50, 48);
        let model = TeacherModel::init(&schema, &tiny_shape(), 39).unwrap();
        let (emb, _, gate_c, gate_d, _, _) = model.parts();
        for s in &batch {
            let x = emb.encode_teacher_input(s);
            for gate in [gate_c, gate_d] {
                let g = gate_probs(gate, &x).unwrap();
                let sum: f64 = g.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(g.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn literal_click_label_flag_reproduces_printed_form() {
        let (schema, batch) = random_batch(16, 49);
        let model = TeacherModel::init(&schema, &tiny_shape(), 40).unwrap();
        let standard = TrainConfig::default();
        let literal = TrainConfig {
            paper_literal_click_label: true,
            ..TrainConfig::default()
        };
        let a = model.loss(&batch, &standard).unwrap();
        let b = model.loss(&batch, &literal).unwrap();
        // duration loss is unaffected; click loss differs whenever some
        // clicked sample is not a long read
        assert_eq!(a.duration, b.duration);
        let mixed = batch.iter().any(|s| s.clicked != s.long_read);
        assert_eq!(a.click != b.click, mixed);
    }
}
