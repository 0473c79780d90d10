//! Double-tower candidate-generation model and the distillation that
//! transfers the teacher's joint click-and-long-read estimate onto the tower
//! inner product.
//!
//! `R(u)` and `S(v)` are independent DNN towers over the user-side and
//! item-side embeddings; the student's estimate is `σ(R(u)ᵀ S(v))`. Training
//! minimizes the binary KL divergence from the teacher's pctcvr (held
//! constant: no gradient ever reaches `θ_t`) to the student's probability.
//! Because item vectors depend only on item features, they can be
//! precomputed and indexed for top-k retrieval.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelShape, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{EmbeddingSet, FeatureSchema, Sample};
use crate::numerics::{clamp_prob, sigmoid, Activation, ParamTensor};
use crate::teacher::{TeacherLosses, TeacherModel};
use crate::{DenseNet, Real, Vector};

/// Double-tower student; owns all of `θ_s`, disjoint from any teacher.
#[derive(Debug, Clone)]
pub struct StudentModel {
    schema: FeatureSchema,
    shape: ModelShape,
    embeddings: EmbeddingSet,
    user_tower: DenseNet,
    item_tower: DenseNet,
}

fn tower_sizes(shape: &ModelShape) -> Vec<(usize, Activation)> {
    let mut sizes: Vec<(usize, Activation)> = shape
        .tower_hidden
        .iter()
        .map(|&d| (d, Activation::Relu))
        .collect();
    // final layer is identity so vectors are unconstrained reals
    let last = sizes.len() - 1;
    sizes[last].1 = Activation::Identity;
    sizes
}

impl StudentModel {
    pub fn init(schema: &FeatureSchema, shape: &ModelShape, seed: u64) -> Result<Self> {
        schema.validate()?;
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = EmbeddingSet::init(schema, &mut rng);
        let user_tower = DenseNet::new(schema.user_dim(), &tower_sizes(shape), &mut rng);
        let item_tower = DenseNet::new(schema.item_dim(), &tower_sizes(shape), &mut rng);
        Ok(Self {
            schema: schema.clone(),
            shape: shape.clone(),
            embeddings,
            user_tower,
            item_tower,
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

    /// Output dimension of both towers.
    pub fn vector_dim(&self) -> usize {
        self.shape.tower_output_dim()
    }

    pub fn user_vector(&self, sample: &Sample) -> Result<Vector> {
        self.user_tower.forward(&self.embeddings.encode_user(sample))
    }

    pub fn item_vector(&self, sample: &Sample) -> Result<Vector> {
        self.item_tower.forward(&self.embeddings.encode_item(sample))
    }

    /// Item vector straight from categorical ids (index building).
    pub fn item_vector_from_ids(&self, item_ids: &[usize]) -> Result<Vector> {
        self.item_tower
            .forward(&self.embeddings.encode_item_ids(item_ids))
    }

    /// Raw tower inner product; ordering by this equals ordering by
    /// [`student_predict`] since the sigmoid is monotone.
    pub fn score(&self, sample: &Sample) -> Result<Real> {
        self.user_vector(sample)?.dot(&self.item_vector(sample)?)
    }

    /// One distillation step over a batch against a frozen teacher.
    ///
    /// The teacher is taken by shared reference: its parameters cannot
    /// change, and no gradient flows into it.
    pub fn distill_step(
        &mut self,
        batch: &[Sample],
        teacher: &TeacherModel,
        cfg: &TrainConfig,
        optimizer: &mut crate::Optimizer,
    ) -> Result<Real> {
        self.zero_grads();
        let loss = self.accumulate_distill_batch(batch, teacher, cfg)?;
        optimizer.step(self.param_tensors());
        Ok(loss)
    }

    /// Accumulate distillation gradients over a batch; returns the summed
    /// loss.
    pub fn accumulate_distill_batch(
        &mut self,
        batch: &[Sample],
        teacher: &TeacherModel,
        cfg: &TrainConfig,
    ) -> Result<Real> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if teacher.schema() != &self.schema {
            return Err(Error::SchemaMismatch(
                "teacher and student were built from different schemas".into(),
            ));
        }
        let mut total = 0.0;
        for sample in batch {
            let target = soften(teacher.forward(sample)?.pctcvr, cfg.distill_temperature);
            total += self.accumulate_sample(sample, |dot| {
                let q = sigmoid(dot);
                let loss = if cfg.literal_printed_distill {
                    distill_loss_literal(target, q)
                } else {
                    distill_loss(target, q)
                };
                (loss, distill_grad(target, q))
            })?;
        }
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss(total));
        }
        Ok(total)
    }

    /// Shared per-sample machinery for every tower-scored objective: run both
    /// towers, get `(loss, dLoss/dDot)` from the closure, backpropagate.
    pub(crate) fn accumulate_sample(
        &mut self,
        sample: &Sample,
        loss_and_grad: impl FnOnce(Real) -> (Real, Real),
    ) -> Result<Real> {
        let u_in = self.embeddings.encode_user(sample);
        let v_in = self.embeddings.encode_item(sample);
        let ru = self.user_tower.forward_train(&u_in)?;
        let sv = self.item_tower.forward_train(&v_in)?;
        let dot = ru.dot(&sv)?;
        let (loss, d_dot) = loss_and_grad(dot);

        let mut d_ru = sv;
        d_ru.scale(d_dot);
        let mut d_sv = ru;
        d_sv.scale(d_dot);
        // d_sv was scaled from ru, d_ru from sv: d dot/d ru = sv and vice versa
        let d_u_in = self.user_tower.backward(&d_ru)?;
        let d_v_in = self.item_tower.backward(&d_sv)?;
        self.embeddings
            .scatter_user_grad(&sample.user_ids, d_u_in.as_slice());
        self.embeddings
            .scatter_item_grad(&sample.item_ids, d_v_in.as_slice());
        Ok(loss)
    }

    pub fn zero_grads(&mut self) {
        self.embeddings.zero_grads();
        self.user_tower.zero_grads();
        self.item_tower.zero_grads();
    }

    /// Canonical tensor order: embeddings, user tower, item tower.
    pub fn param_tensors(&mut self) -> Vec<ParamTensor<'_, Real>> {
        let mut out = self.embeddings.param_tensors();
        out.extend(self.user_tower.param_tensors());
        out.extend(self.item_tower.param_tensors());
        out
    }

    pub fn flat_params(&self) -> Vec<Real> {
        let mut out = Vec::new();
        self.embeddings.push_flat_params(&mut out);
        self.user_tower.push_flat_params(&mut out);
        self.item_tower.push_flat_params(&mut out);
        out
    }

    pub fn flat_grads(&self) -> Vec<Real> {
        let mut out = Vec::new();
        self.embeddings.push_flat_grads(&mut out);
        self.user_tower.push_flat_grads(&mut out);
        self.item_tower.push_flat_grads(&mut out);
        out
    }

    pub fn set_flat_params(&mut self, params: &[Real]) {
        let mut reader = crate::numerics::FlatReader::new(params);
        self.embeddings.load_flat_params(&mut reader);
        self.user_tower.load_flat_params(&mut reader);
        self.item_tower.load_flat_params(&mut reader);
        reader.finish();
    }

    pub(crate) fn parts(&self) -> (&EmbeddingSet, &DenseNet, &DenseNet) {
        (&self.embeddings, &self.user_tower, &self.item_tower)
    }

    pub(crate) fn from_parts(
        schema: FeatureSchema,
        shape: ModelShape,
        embeddings: EmbeddingSet,
        user_tower: DenseNet,
        item_tower: DenseNet,
    ) -> Self {
        Self {
            schema,
            shape,
            embeddings,
            user_tower,
            item_tower,
        }
    }

    #[cfg(test)]
    pub(crate) fn towers_mut(&mut self) -> (&mut DenseNet, &mut DenseNet) {
        (&mut self.user_tower, &mut self.item_tower)
    }

    #[cfg(test)]
    pub(crate) fn embeddings_mut(&mut self) -> &mut EmbeddingSet {
        &mut self.embeddings
    }
}

/// `σ(R(u)ᵀ S(v))`: the student's joint click-and-long-read estimate.
pub fn student_predict(user_vec: &Vector, item_vec: &Vector) -> Result<Real> {
    Ok(sigmoid(user_vec.dot(item_vec)?))
}

/// Binary KL divergence from the (frozen) teacher probability `p` to the
/// student probability `q`.
pub fn distill_loss(p: Real, q: Real) -> Real {
    let p = clamp_prob(p);
    let q = clamp_prob(q);
    p * (p.ln() - q.ln()) + (1.0 - p) * ((1.0 - p).ln() - (1.0 - q).ln())
}

/// The distillation expression exactly as printed (ratios without
/// logarithms). Not a divergence; kept for comparison only.
pub fn distill_loss_literal(p: Real, q: Real) -> Real {
    let p = clamp_prob(p);
    let q = clamp_prob(q);
    p * (p / q) + (1.0 - p) * ((1.0 - p) / (1.0 - q))
}

/// d `distill_loss(p, σ(a))` / d `a`, which reduces to `q - p` — the
/// soft-target cross-entropy gradient.
pub fn distill_grad(p: Real, q: Real) -> Real {
    clamp_prob(q) - clamp_prob(p)
}

/// Temperature hook on the teacher probability; `t = 1` is the identity.
fn soften(p: Real, t: Real) -> Real {
    if t == 1.0 {
        return p;
    }
    // scale the teacher logit by 1/t
    let p = clamp_prob(p);
    sigmoid((p / (1.0 - p)).ln() / t)
}

/// One step minimizing the joint objective: the teacher part touches only
/// `θ_t`, the student part only `θ_s`, so one joint step equals one
/// teacher-only step plus one student-only step from the same snapshot.
///
/// Both gradient passes run at the pre-step teacher parameters, so the
/// teacher forward pass is shared: its traced output doubles as the frozen
/// distillation target, bit-identical to a separate read-only pass.
pub fn joint_train_step(
    batch: &[Sample],
    teacher: &mut TeacherModel,
    student: &mut StudentModel,
    cfg: &TrainConfig,
    teacher_opt: &mut crate::Optimizer,
    student_opt: &mut crate::Optimizer,
) -> Result<(TeacherLosses, Real)> {
    if teacher.schema() != student.schema() {
        return Err(Error::SchemaMismatch(
            "teacher and student were built from different schemas".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    teacher.zero_grads();
    student.zero_grads();
    let mut duration = 0.0;
    let mut click = 0.0;
    let mut student_loss = 0.0;
    for sample in batch {
        let out = teacher.forward_train(sample)?;
        let (l_d, l_c, d_ac, d_ad) = crate::teacher::loss_terms(&out, sample, cfg);
        duration += l_d;
        click += l_c;
        teacher.backward(d_ac, d_ad)?;

        let target = soften(out.pctcvr, cfg.distill_temperature);
        student_loss += student.accumulate_sample(sample, |dot| {
            let q = sigmoid(dot);
            let loss = if cfg.literal_printed_distill {
                distill_loss_literal(target, q)
            } else {
                distill_loss(target, q)
            };
            (loss, distill_grad(target, q))
        })?;
    }
    let weighted = cfg.w1 * duration + cfg.w2 * click;
    if !weighted.is_finite() || !student_loss.is_finite() {
        return Err(Error::NonFiniteLoss(weighted + student_loss));
    }
    teacher_opt.step(teacher.param_tensors());
    student_opt.step(student.param_tensors());
    let teacher_losses = TeacherLosses {
        total: weighted,
        duration,
        click,
        batch_len: batch.len(),
    };
    Ok((teacher_losses, student_loss))
}
